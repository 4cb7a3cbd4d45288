//! Summary statistics, genetic-predicted traits and the naive and corrected
//! trans-ancestry genetic-correlation estimators.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ld::{merge_ld_blocks, CovarianceMatrix};
use crate::moments::{Flagged, MomentEstimates, Status};
use crate::shrinkage::{check_h2, check_marginal_moments, check_omega, theorem1_bracket, theorem2_bracket};
use crate::sim::{EffectModel, GenotypeMatrix, TraitVector};

/// Corrected values beyond this magnitude are reported with a warning.
pub const WARN_ABS_CORRECTED: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    Marginal,
    RidgeAdjusted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub values: DVector<f64>,
    pub kind: EstimateKind,
    pub n_source: usize,
    pub lambda: f64,
}

impl EffectEstimate {
    pub fn marginal(values: DVector<f64>, n_source: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("effect estimate has non-finite entries".into()));
        }
        Ok(Self {
            values,
            kind: EstimateKind::Marginal,
            n_source,
            lambda: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub g_naive: f64,
    pub g_corrected: f64,
    pub h2_beta: f64,
    pub h2_alpha: f64,
    pub omega: f64,
    pub moments: MomentEstimates,
    pub variance_estimate: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VParams {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub lambda: f64,
}

impl VParams {
    pub fn new(v1: f64, v2: f64, v3: f64, lambda: f64) -> Result<Self> {
        let v = Self { v1, v2, v3, lambda };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v1 > 0.0 && self.v2 > 0.0 && self.v3 > 0.0) {
            return Err(Error::Domain(format!(
                "V parameters must be positive, got ({}, {}, {})",
                self.v1, self.v2, self.v3
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `β̂ = n⁻¹ Xᵀ y`.
pub fn marginal_summary_stats(x: &GenotypeMatrix, y: &TraitVector) -> Result<EffectEstimate> {
    if !x.is_standardized() {
        return Err(Error::State("summary statistics need standardized genotypes".into()));
    }
    if y.len() != x.n() {
        return Err(Error::Shape(format!("{} trait values for {} samples", y.len(), x.n())));
    }
    let mut beta = x.values().tr_mul(&y.values);
    beta /= x.n() as f64;
    EffectEstimate::marginal(beta, x.n())
}

/// `ŷ = Z β̂`.
pub fn predict_traits(z: &GenotypeMatrix, est: &EffectEstimate) -> Result<TraitVector> {
    if est.values.len() != z.p() {
        return Err(Error::Shape(format!(
            "{} effect estimates for {} variants",
            est.values.len(),
            z.p()
        )));
    }
    Ok(TraitVector::observed(z.values() * &est.values))
}

/// Raw cosine of the two vectors, without centering.
pub fn naive_correlation(y_obs: &TraitVector, y_pred: &TraitVector) -> Result<f64> {
    cosine(&y_obs.values, &y_pred.values)
}

/// Cosine after optionally subtracting each vector's mean.
pub fn trait_correlation(y_obs: &TraitVector, y_pred: &TraitVector, center: bool) -> Result<f64> {
    if !center {
        return naive_correlation(y_obs, y_pred);
    }
    let c = |v: &DVector<f64>| v.add_scalar(-v.mean());
    cosine(&c(&y_obs.values), &c(&y_pred.values))
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("correlation with a zero-norm vector".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

fn flag(value: f64) -> Flagged<f64> {
    let status = if value.abs() > WARN_ABS_CORRECTED {
        Status::Warned
    } else {
        Status::Ok
    };
    Flagged { value, status }
}

/// `G^M = G · [b1(Σ_X²Σ_Z)/(h²_α b1²(Σ_XΣ_Z)) + ω/(h²_β h²_α b1(Σ_XΣ_Z))]^{1/2}`.
pub fn correct_marginal(
    g: f64,
    h2_beta: f64,
    h2_alpha: f64,
    omega: f64,
    m: &MomentEstimates,
) -> Result<Flagged<f64>> {
    check_h2("h2_beta", h2_beta)?;
    check_h2("h2_alpha", h2_alpha)?;
    check_omega(omega)?;
    check_marginal_moments(m)?;
    let factor = (theorem1_bracket(h2_beta, omega, m) / h2_alpha).sqrt();
    Ok(flag(g * factor))
}

/// `G^{M_W} = G^W · [(V2 ω + V3 h²_β)/(V1² h²_β h²_α)]^{1/2}`.
pub fn correct_reference(
    g_w: f64,
    h2_beta: f64,
    h2_alpha: f64,
    omega: f64,
    v: &VParams,
) -> Result<Flagged<f64>> {
    check_h2("h2_beta", h2_beta)?;
    check_h2("h2_alpha", h2_alpha)?;
    check_omega(omega)?;
    v.validate()?;
    let factor = (theorem2_bracket(h2_beta, omega, v) / h2_alpha).sqrt();
    Ok(flag(g_w * factor))
}

/// `β̂_W = (Σ̂_W + λI)⁻¹ β̂`, solved per block by Cholesky.
pub fn ridge_adjust(est: &EffectEstimate, w_cov: &CovarianceMatrix, lambda: f64) -> Result<EffectEstimate> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if w_cov.dim() != est.values.len() {
        return Err(Error::Shape(format!(
            "reference panel has {} variants, estimate has {}",
            w_cov.dim(),
            est.values.len()
        )));
    }
    let mut out = DVector::zeros(est.values.len());
    for (range, block) in w_cov.partition().offsets().zip(w_cov.blocks()) {
        let chol = shifted_cholesky(block, lambda)?;
        let rhs = est.values.rows(range.start, range.len()).into_owned();
        out.rows_mut(range.start, range.len()).copy_from(&chol.solve(&rhs));
    }
    Ok(EffectEstimate {
        values: out,
        kind: EstimateKind::RidgeAdjusted,
        n_source: est.n_source,
        lambda,
    })
}

fn shifted_cholesky(block: &DMatrix<f64>, lambda: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let mut a = block.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    Cholesky::new(a).ok_or_else(|| {
        Error::Numerical(format!("Σ̂_W + {lambda}·I is not positive definite"))
    })
}

fn align3(
    a: &CovarianceMatrix,
    b: &CovarianceMatrix,
    c: &CovarianceMatrix,
) -> Result<(CovarianceMatrix, CovarianceMatrix, CovarianceMatrix)> {
    if a.dim() != b.dim() || a.dim() != c.dim() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {}, {}, {}",
            a.dim(),
            b.dim(),
            c.dim()
        )));
    }
    let merged = merge_ld_blocks(&merge_ld_blocks(a.partition(), b.partition())?, c.partition())?;
    Ok((a.reblock(&merged)?, b.reblock(&merged)?, c.reblock(&merged)?))
}

/// `V1 = tr(Σ_Z R Σ_X)/p`, `V2 = tr(R Σ_Z R Σ_X)/p`, `V3 = tr(R Σ_Z R Σ_X²)/p`
/// with `R = (Σ̂_W + λI)⁻¹`.
pub fn compute_v_params(
    w_cov: &CovarianceMatrix,
    x_cov: &CovarianceMatrix,
    z_cov: &CovarianceMatrix,
    lambda: f64,
) -> Result<VParams> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let (w, x, z) = align3(w_cov, x_cov, z_cov)?;
    let (mut v1, mut v2, mut v3) = (0.0, 0.0, 0.0);
    for ((bw, bx), bz) in w.blocks().iter().zip(x.blocks()).zip(z.blocks()) {
        let r = shifted_cholesky(bw, lambda)?.inverse();
        let rx = &r * bx;
        let rz = &r * bz;
        let rx2 = &rx * bx;
        v1 += rx.dot(bz);
        v2 += rz.dot(&rx.transpose());
        v3 += rz.dot(&rx2.transpose());
    }
    let p = w.dim() as f64;
    VParams::new(v1 / p, v2 / p, v3 / p, lambda)
}

/// `φ* = φ · b1(Σ_X^{1/2}Σ_Z^{1/2})`, valid when the effect (co)variance
/// matrices are proportional to the identity.
pub fn convert_effect_correlation(phi: f64, b1_sqrtxz: f64) -> Result<f64> {
    if !(b1_sqrtxz > 0.0) {
        return Err(Error::Domain(format!("b1_sqrtxz must be positive, got {b1_sqrtxz}")));
    }
    Ok(phi * b1_sqrtxz)
}

/// Trace functionals entering the variance limit of `G`. Effect (co)variances
/// enter on the sampled scale `Σ_β = Φ_ββ / p`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceInputs {
    pub n: usize,
    pub n_z: usize,
    pub h2_beta: f64,
    pub h2_alpha: f64,
    /// `tr(Σ_Z Σ_X Σ_βα Σ_Z Σ_X Σ_βα)`
    pub tr_zx_ba_zx_ba: f64,
    /// `tr(Σ_Z Σ_α Σ_Z Σ_X Σ_β Σ_X)`
    pub tr_z_aa_z_x_bb_x: f64,
    /// `tr(Σ_Z Σ_X Σ_βα)`, squared where it is used
    pub tr_zx_ba: f64,
    /// `Σ_i C_i (Σ_Z Σ_X)_ii²`
    pub kurtosis_term: f64,
    /// `tr(Σ_X Σ_β)`
    pub tr_x_bb: f64,
    /// `tr(Σ_Z Σ_α)`
    pub tr_z_aa: f64,
    /// `tr(Σ_X Σ_Z)`
    pub tr_xz: f64,
    /// `tr(Σ_Z Σ_X Σ_β Σ_X)`
    pub tr_zx_bb_x: f64,
    /// `tr(Σ_X Σ_Z Σ_α Σ_Z)`
    pub tr_xz_aa_z: f64,
    /// Per-variant `C_i = E[α_i²β_i²] − 2(E α_iβ_i)² − E α_i² E β_i²`.
    pub kurtosis_correction: Vec<f64>,
}

impl VarianceInputs {
    /// Exact traces for a known effect model and population LD.
    pub fn from_model(
        x_cov: &CovarianceMatrix,
        z_cov: &CovarianceMatrix,
        model: &EffectModel,
        n: usize,
        n_z: usize,
        h2_beta: f64,
        h2_alpha: f64,
    ) -> Result<Self> {
        if x_cov.dim() != model.p() {
            return Err(Error::Shape(format!(
                "LD has dimension {}, effect model has {}",
                x_cov.dim(),
                model.p()
            )));
        }
        let merged = merge_ld_blocks(x_cov.partition(), z_cov.partition())?;
        let (x, z) = (x_cov.reblock(&merged)?, z_cov.reblock(&merged)?);
        let p = model.p() as f64;
        let kc = model.kurtosis_correction();
        let mut s = Self {
            n,
            n_z,
            h2_beta,
            h2_alpha,
            tr_zx_ba_zx_ba: 0.0,
            tr_z_aa_z_x_bb_x: 0.0,
            tr_zx_ba: 0.0,
            kurtosis_term: 0.0,
            tr_x_bb: 0.0,
            tr_z_aa: 0.0,
            tr_xz: 0.0,
            tr_zx_bb_x: 0.0,
            tr_xz_aa_z: 0.0,
            kurtosis_correction: kc.clone(),
        };
        for ((range, bx), bz) in merged.offsets().zip(x.blocks()).zip(z.blocks()) {
            let slice = |v: &[f64]| DVector::from_iterator(range.len(), v[range.clone()].iter().map(|e| e / p));
            let db = slice(model.var_beta());
            let da = slice(model.var_alpha());
            let dba = slice(model.cov_cross());
            let m = bz * bx;
            let k = m.nrows();
            for i in 0..k {
                for j in 0..k {
                    s.tr_zx_ba_zx_ba += m[(i, j)] * m[(j, i)] * dba[i] * dba[j];
                }
                s.tr_zx_ba += m[(i, i)] * dba[i];
                s.kurtosis_term += kc[range.start + i] * m[(i, i)] * m[(i, i)];
                s.tr_x_bb += bx[(i, i)] * db[i];
                s.tr_z_aa += bz[(i, i)] * da[i];
            }
            let z_da_z = bz * DMatrix::from_diagonal(&da) * bz;
            let x_db_x = bx * DMatrix::from_diagonal(&db) * bx;
            s.tr_z_aa_z_x_bb_x += z_da_z.dot(&x_db_x);
            s.tr_xz += bx.dot(bz);
            s.tr_zx_bb_x += bz.dot(&x_db_x);
            s.tr_xz_aa_z += bx.dot(&z_da_z);
        }
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let vals = [
            self.tr_zx_ba_zx_ba,
            self.tr_z_aa_z_x_bb_x,
            self.tr_zx_ba,
            self.kurtosis_term,
            self.tr_x_bb,
            self.tr_z_aa,
            self.tr_xz,
            self.tr_zx_bb_x,
            self.tr_xz_aa_z,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite trace input: {self:?}")));
        }
        if self.n == 0 || self.n_z == 0 {
            return Err(Error::Domain("n and n_z must be at least 1".into()));
        }
        check_h2("h2_beta", self.h2_beta)?;
        check_h2("h2_alpha", self.h2_alpha)
    }
}

/// Probability limit of `Var(G)` for the naive estimator.
pub fn variance_naive(inputs: &VarianceInputs) -> Result<f64> {
    inputs.check()?;
    let s = inputs;
    let (n, n_z) = (s.n as f64, s.n_z as f64);
    let (hb, ha) = (s.h2_beta, s.h2_alpha);
    let denom = s.tr_z_aa * s.tr_x_bb * s.tr_xz / (ha * hb) + n * s.tr_z_aa * s.tr_zx_bb_x / ha;
    if !(denom > 0.0) {
        return Err(Error::Numerical(format!("variance denominator {denom} is not positive: {s:?}")));
    }
    let t3sq = s.tr_zx_ba * s.tr_zx_ba;
    let v = n * (s.tr_zx_ba_zx_ba + s.tr_z_aa_z_x_bb_x + s.kurtosis_term) / denom
        + (t3sq + s.tr_x_bb * s.tr_xz_aa_z / hb) / denom
        + (n / n_z) * t3sq / denom
        + 1.0 / n_z;
    if !(v >= 0.0) {
        return Err(Error::Numerical(format!("negative variance {v} from inputs {s:?}")));
    }
    Ok(v)
}

/// `Var(G^M)`: the limit of `Var(G)` times the squared correction factor.
pub fn variance_corrected(inputs: &VarianceInputs, m: &MomentEstimates, omega: f64) -> Result<f64> {
    check_omega(omega)?;
    check_marginal_moments(m)?;
    let v = variance_naive(inputs)?;
    let out = v * theorem1_bracket(inputs.h2_beta, omega, m) / inputs.h2_alpha;
    if !(out >= 0.0) {
        return Err(Error::Numerical(format!(
            "negative corrected variance {out} (naive {v}) from inputs {inputs:?}"
        )));
    }
    Ok(out)
}

/// Marginal pipeline: `β̂ → ŷ → G → G^M`, with `ω = p/n` taken from the data.
#[allow(clippy::too_many_arguments)]
pub fn estimate_marginal(
    x: &GenotypeMatrix,
    y: &TraitVector,
    z: &GenotypeMatrix,
    y_z: &TraitVector,
    h2_beta: f64,
    h2_alpha: f64,
    moments: &MomentEstimates,
    center: bool,
) -> Result<EstimationResult> {
    let est = marginal_summary_stats(x, y)?;
    estimate_from_summary(&est, z, y_z, h2_beta, h2_alpha, moments, center)
}

/// As [`estimate_marginal`] but starting from precomputed summary statistics.
pub fn estimate_from_summary(
    est: &EffectEstimate,
    z: &GenotypeMatrix,
    y_z: &TraitVector,
    h2_beta: f64,
    h2_alpha: f64,
    moments: &MomentEstimates,
    center: bool,
) -> Result<EstimationResult> {
    if est.n_source == 0 {
        return Err(Error::Domain("summary statistics must record their sample size".into()));
    }
    let y_hat = predict_traits(z, est)?;
    let g = trait_correlation(y_z, &y_hat, center)?;
    let omega = est.values.len() as f64 / est.n_source as f64;
    let gm = correct_marginal(g, h2_beta, h2_alpha, omega, moments)?;
    Ok(EstimationResult {
        g_naive: g,
        g_corrected: gm.value,
        h2_beta,
        h2_alpha,
        omega,
        moments: moments.clone(),
        variance_estimate: None,
        status: gm.status.merge(moments.status),
    })
}
