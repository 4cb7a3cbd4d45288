//! Normalized trace functionals `b_k` of single and product covariance
//! matrices, with finite-sample debiasing of sample estimates.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ld::{matrix_sqrt, merge_ld_blocks, CovarianceMatrix};

/// Non-fatal outcome flag carried from moment debiasing into estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Status {
    #[default]
    Ok,
    Warned,
}

impl Status {
    pub fn merge(self, other: Status) -> Status {
        if self == Status::Warned || other == Status::Warned {
            Status::Warned
        } else {
            Status::Ok
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Warned => "warned",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    PopulationExact,
    SampleDebiased,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::PopulationExact => "population-exact",
            Provenance::SampleDebiased => "sample-debiased",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "population-exact" => Ok(Provenance::PopulationExact),
            "sample-debiased" => Ok(Provenance::SampleDebiased),
            other => Err(Error::Domain(format!("unknown provenance {other:?}"))),
        }
    }
}

/// The spectral functionals that drive every correction formula.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    /// `tr(Σ_X Σ_Z)/p`
    pub b1_xz: f64,
    /// `tr(Σ_X² Σ_Z)/p`
    pub b1_x2z: f64,
    /// `tr(Σ_X^{1/2} Σ_Z^{1/2})/p`
    pub b1_sqrtxz: f64,
    pub b2_x: f64,
    pub b3_x: f64,
    pub b2_z: Option<f64>,
    pub p: usize,
    pub provenance: Provenance,
    pub status: Status,
}

pub const MOMENTS_HEADER: &str = "b1_xz,b1_x2z,b1_sqrtxz,b2_x,b3_x,b2_z,p,provenance";

impl MomentEstimates {
    /// Moments of `Σ_X = Σ_Z = I`.
    pub fn identity(p: usize) -> Self {
        Self {
            b1_xz: 1.0,
            b1_x2z: 1.0,
            b1_sqrtxz: 1.0,
            b2_x: 1.0,
            b3_x: 1.0,
            b2_z: Some(1.0),
            p,
            provenance: Provenance::PopulationExact,
            status: Status::Ok,
        }
    }

    /// The within-population moment set obtained by substituting `Σ_Z = Σ_X`:
    /// `b1_xz -> b2_x` and `b1_x2z -> b3_x`.
    pub fn within_population(&self) -> Self {
        Self {
            b1_xz: self.b2_x,
            b1_x2z: self.b3_x,
            b1_sqrtxz: 1.0,
            b2_z: Some(self.b2_x),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(rows: &[MomentEstimates], w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(MOMENTS_HEADER.split(','))?;
        for m in rows {
            wtr.write_record([
                m.b1_xz.to_string(),
                m.b1_x2z.to_string(),
                m.b1_sqrtxz.to_string(),
                m.b2_x.to_string(),
                m.b3_x.to_string(),
                m.b2_z.map(|v| v.to_string()).unwrap_or_default(),
                m.p.to_string(),
                m.provenance.as_str().to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Vec<MomentEstimates>> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header.join(",") != MOMENTS_HEADER {
            return Err(Error::Domain(format!(
                "moments header must be `{MOMENTS_HEADER}`, got `{}`",
                header.join(",")
            )));
        }
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse().map_err(|_| {
                    Error::Domain(format!("bad value {:?} in column {}", &rec[i], header[i]))
                })
            };
            let b2_z = if rec[5].trim().is_empty() {
                None
            } else {
                Some(num(5)?)
            };
            out.push(MomentEstimates {
                b1_xz: num(0)?,
                b1_x2z: num(1)?,
                b1_sqrtxz: num(2)?,
                b2_x: num(3)?,
                b3_x: num(4)?,
                b2_z,
                p: rec[6]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Domain(format!("bad p {:?}", &rec[6])))?,
                provenance: rec[7].parse()?,
                status: Status::Ok,
            });
        }
        Ok(out)
    }
}

/// Accepted exponents for `Σ_X` and `Σ_Z` in [`product_moment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Power {
    Zero,
    Half,
    One,
    Two,
    Three,
}

impl Power {
    pub fn from_f64(k: f64) -> Result<Self> {
        match k {
            k if k == 0.0 => Ok(Power::Zero),
            k if k == 0.5 => Ok(Power::Half),
            k if k == 1.0 => Ok(Power::One),
            k if k == 2.0 => Ok(Power::Two),
            k if k == 3.0 => Ok(Power::Three),
            _ => Err(Error::Domain(format!("unsupported matrix power {k}"))),
        }
    }
}

fn powered_blocks(cov: &CovarianceMatrix, k: Power) -> Result<Vec<DMatrix<f64>>> {
    Ok(match k {
        Power::Zero => cov
            .partition()
            .sizes()
            .into_iter()
            .map(|s| DMatrix::identity(s, s))
            .collect(),
        Power::Half => matrix_sqrt(cov)?.blocks().to_vec(),
        Power::One => cov.blocks().to_vec(),
        Power::Two => cov.blocks().iter().map(|b| b * b).collect(),
        Power::Three => cov.blocks().iter().map(|b| b * b * b).collect(),
    })
}

/// `tr(A B)` for symmetric `B`, without forming the product.
pub(crate) fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// `tr(Σ_X^{k_x} Σ_Z^{k_z}) / p`, evaluated block by block. Differing
/// partitions are first re-blocked to their merged partition.
pub fn product_moment(
    x: &CovarianceMatrix,
    z: &CovarianceMatrix,
    k_x: Power,
    k_z: Power,
) -> Result<f64> {
    if x.dim() != z.dim() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            z.dim()
        )));
    }
    if matches!(k_z, Power::Two | Power::Three) {
        return Err(Error::Domain("Σ_Z powers are limited to 0, 1/2 and 1".into()));
    }
    let (x, z) = aligned(x, z)?;
    let xs = powered_blocks(&x, k_x)?;
    let zs = powered_blocks(&z, k_z)?;
    let total: f64 = xs.iter().zip(&zs).map(|(a, b)| trace_of_product(a, b)).sum();
    Ok(total / x.dim() as f64)
}

fn aligned(
    x: &CovarianceMatrix,
    z: &CovarianceMatrix,
) -> Result<(CovarianceMatrix, CovarianceMatrix)> {
    if x.partition().ranges() == z.partition().ranges() {
        return Ok((x.clone(), z.clone()));
    }
    let merged = merge_ld_blocks(x.partition(), z.partition())?;
    Ok((x.reblock(&merged)?, z.reblock(&merged)?))
}

/// A value paired with a non-fatal status flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub status: Status,
}

/// Invert the sample-moment forward map `b2(Σ̂) = b2 + ω b1²`,
/// `b3(Σ̂) = b3 + 3ω b1 b2 + ω² b1³`.
pub fn debias_sample_moments(
    b1_hat: f64,
    b2_hat: f64,
    b3_hat: f64,
    omega: f64,
) -> Result<Flagged<(f64, f64, f64)>> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Domain(format!("omega must be positive, got {omega}")));
    }
    let b1 = b1_hat;
    let b2 = b2_hat - omega * b1 * b1;
    let b3 = b3_hat - 3.0 * omega * b1 * b2 - omega * omega * b1 * b1 * b1;
    let status = if b2 <= 0.0 || b3 <= 0.0 {
        Status::Warned
    } else {
        Status::Ok
    };
    Ok(Flagged {
        value: (b1, b2, b3),
        status,
    })
}

/// `tr(Σ̂_X² Σ̂_Z) - n⁻¹ tr(Σ_X Σ_Z) tr(Σ_X)`.
pub fn debias_cross_trace(tr_hat_x2z: f64, tr_xz: f64, tr_x: f64, n: usize) -> Result<Flagged<f64>> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    let value = tr_hat_x2z - tr_xz * tr_x / n as f64;
    let status = if value < 0.0 { Status::Warned } else { Status::Ok };
    Ok(Flagged { value, status })
}

/// Aggregate per-block traces into [`MomentEstimates`].
///
/// In `SampleDebiased` mode the inputs are sample covariances from a cohort
/// of `n_x` samples. Each block is debiased with its own aspect ratio
/// `p_i / n_x` before the block-size-weighted aggregation. `b2_z` is left
/// unset because no sample size is known for `Σ̂_Z`.
pub fn blockwise_moments(
    x: &CovarianceMatrix,
    z: &CovarianceMatrix,
    n_x: usize,
    mode: Provenance,
) -> Result<MomentEstimates> {
    if x.partition().ranges() != z.partition().ranges() {
        return Err(Error::Domain(
            "x and z must share a block partition; merge them first".into(),
        ));
    }
    if mode == Provenance::SampleDebiased && n_x == 0 {
        return Err(Error::Domain("n_x must be positive for debiasing".into()));
    }
    let p = x.dim();
    let xh = matrix_sqrt(x)?;
    let zh = matrix_sqrt(z)?;

    let mut acc = [0.0f64; 6];
    let mut status = Status::Ok;
    for (i, (bx, bz)) in x.blocks().iter().zip(z.blocks()).enumerate() {
        let size = bx.nrows() as f64;
        let x2 = bx * bx;
        let tr_x = bx.trace();
        let tr_xz = trace_of_product(bx, bz);
        let tr_x2z = trace_of_product(&x2, bz);
        let tr_x2 = trace_of_product(bx, bx);
        let tr_x3 = trace_of_product(&x2, bx);
        let tr_z2 = trace_of_product(bz, bz);
        let tr_sqrt = trace_of_product(&xh.blocks()[i], &zh.blocks()[i]);

        let (tr_x2z, tr_x2, tr_x3) = match mode {
            Provenance::PopulationExact => (tr_x2z, tr_x2, tr_x3),
            Provenance::SampleDebiased => {
                let cross = debias_cross_trace(tr_x2z, tr_xz, tr_x, n_x)?;
                let omega_i = size / n_x as f64;
                let d = debias_sample_moments(tr_x / size, tr_x2 / size, tr_x3 / size, omega_i)?;
                status = status.merge(cross.status).merge(d.status);
                (cross.value, d.value.1 * size, d.value.2 * size)
            }
        };
        for (a, v) in acc
            .iter_mut()
            .zip([tr_xz, tr_x2z, tr_sqrt, tr_x2, tr_x3, tr_z2])
        {
            *a += v;
        }
    }
    let pf = p as f64;
    Ok(MomentEstimates {
        b1_xz: acc[0] / pf,
        b1_x2z: acc[1] / pf,
        b1_sqrtxz: acc[2] / pf,
        b2_x: acc[3] / pf,
        b3_x: acc[4] / pf,
        b2_z: (mode == Provenance::PopulationExact).then_some(acc[5] / pf),
        p,
        provenance: mode,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ld::{build_ar_blocks, build_ar_covariance, BlockPartition, CovSource};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_moments_are_one() {
        let i = CovarianceMatrix::identity(BlockPartition::single(4).unwrap());
        for kx in [Power::Zero, Power::Half, Power::One, Power::Two, Power::Three] {
            for kz in [Power::Zero, Power::Half, Power::One] {
                assert_abs_diff_eq!(product_moment(&i, &i, kx, kz).unwrap(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ar_half_squared_trace() {
        let x = build_ar_covariance(0.5, 2).unwrap();
        let z = CovarianceMatrix::identity(BlockPartition::single(2).unwrap());
        assert_abs_diff_eq!(
            product_moment(&x, &z, Power::Two, Power::Zero).unwrap(),
            1.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn explicit_two_by_two_product() {
        let x = build_ar_covariance(0.5, 2).unwrap();
        let z = build_ar_covariance(0.1, 2).unwrap();
        // [[1,.5],[.5,1]]·[[1,.1],[.1,1]] has diagonal 1.05, 1.05
        assert_abs_diff_eq!(
            product_moment(&x, &z, Power::One, Power::One).unwrap(),
            1.05,
            epsilon = 1e-15
        );
    }

    #[test]
    fn differing_partitions_are_merged() {
        let x = build_ar_blocks(&[3, 3], &[0.5, 0.2]).unwrap();
        let z = build_ar_covariance(0.3, 6).unwrap();
        let dense_x = CovarianceMatrix::from_blocks(
            BlockPartition::single(6).unwrap(),
            vec![x.to_dense().unwrap()],
            CovSource::SyntheticBlock,
        )
        .unwrap();
        let a = product_moment(&x, &z, Power::Two, Power::One).unwrap();
        let b = product_moment(&dense_x, &z, Power::Two, Power::One).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_dimension_is_domain_error() {
        let x = build_ar_covariance(0.5, 3).unwrap();
        let z = build_ar_covariance(0.5, 4).unwrap();
        assert!(matches!(
            product_moment(&x, &z, Power::One, Power::One),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn debias_examples() {
        let d = debias_sample_moments(1.0, 1.5, 3.0, 0.5).unwrap();
        assert_abs_diff_eq!(d.value.1, 1.0);
        let d = debias_sample_moments(1.0, 2.0, 5.0, 1.0).unwrap();
        assert_eq!(d.value, (1.0, 1.0, 1.0));
        assert_eq!(d.status, Status::Ok);
        let d = debias_sample_moments(1.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(d.status, Status::Warned);
        assert!(debias_sample_moments(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn cross_trace_examples() {
        let d = debias_cross_trace(200.0, 100.0, 100.0, 100).unwrap();
        assert_eq!(d.value, 100.0);
        let d = debias_cross_trace(7.5, 3.0, 3.0, usize::MAX).unwrap();
        assert_abs_diff_eq!(d.value, 7.5, epsilon = 1e-12);
        assert_eq!(debias_cross_trace(1.0, 10.0, 10.0, 1).unwrap().status, Status::Warned);
    }

    #[test]
    fn blockwise_identity_all_one() {
        let i = CovarianceMatrix::identity(BlockPartition::from_sizes(&[3, 4, 5], "t").unwrap());
        let m = blockwise_moments(&i, &i, 0, Provenance::PopulationExact).unwrap();
        for v in [m.b1_xz, m.b1_x2z, m.b1_sqrtxz, m.b2_x, m.b3_x, m.b2_z.unwrap()] {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn blockwise_matches_dense_for_mixed_ar() {
        let sizes = [30, 25, 40, 10, 35, 20, 40];
        let x = build_ar_blocks(&sizes, &[0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        let z = build_ar_blocks(&sizes, &[0.1, 0.5, 0.1, 0.9, 0.2, 0.3, 0.4]).unwrap();
        let m = blockwise_moments(&x, &z, 0, Provenance::PopulationExact).unwrap();
        let dx = x.to_dense().unwrap();
        let dz = z.to_dense().unwrap();
        let p = dx.nrows() as f64;
        assert_abs_diff_eq!(m.b1_xz, (&dx * &dz).trace() / p, epsilon = 1e-10);
        assert_abs_diff_eq!(m.b1_x2z, (&dx * &dx * &dz).trace() / p, epsilon = 1e-10);
        assert_abs_diff_eq!(m.b2_x, (&dx * &dx).trace() / p, epsilon = 1e-10);
        assert_abs_diff_eq!(m.b3_x, (&dx * &dx * &dx).trace() / p, epsilon = 1e-10);
        assert_abs_diff_eq!(m.b2_z.unwrap(), (&dz * &dz).trace() / p, epsilon = 1e-10);
        assert!(m.b1_xz <= (m.b2_x * m.b2_z.unwrap()).sqrt());
    }

    #[test]
    fn blockwise_requires_shared_partition() {
        let x = build_ar_blocks(&[2, 2], &[0.1, 0.1]).unwrap();
        let z = build_ar_covariance(0.1, 4).unwrap();
        assert!(matches!(
            blockwise_moments(&x, &z, 10, Provenance::PopulationExact),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn moments_csv_roundtrip() {
        let mut m = MomentEstimates::identity(10);
        m.b2_x = 4.41;
        m.b1_xz = 2.86;
        let mut s = m.clone();
        s.b2_z = None;
        s.provenance = Provenance::SampleDebiased;
        let mut buf = Vec::new();
        MomentEstimates::write_csv(&[m.clone(), s.clone()], &mut buf).unwrap();
        let back = MomentEstimates::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![m, s]);
    }
}
