//! Asymptotic limits of the naive estimators and the LD-heterogeneity
//! shrinkage path `S(t)` between cross- and within-population prediction.

use std::io::Write;

use crate::error::{Error, Result};
use crate::estimators::VParams;
use crate::moments::MomentEstimates;

fn check_common(phi: f64, h2_beta: f64, h2_alpha: f64, omega: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&phi) {
        return Err(Error::Domain(format!("phi must lie in [-1, 1], got {phi}")));
    }
    check_h2("h2_beta", h2_beta)?;
    check_h2("h2_alpha", h2_alpha)?;
    check_omega(omega)
}

pub(crate) fn check_h2(name: &str, h2: f64) -> Result<()> {
    if !(h2 > 0.0 && h2 <= 1.0) {
        return Err(Error::Domain(format!("{name} must lie in (0, 1], got {h2}")));
    }
    Ok(())
}

/// `ω = 0` is accepted as the noise-free limit.
pub(crate) fn check_omega(omega: f64) -> Result<()> {
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(Error::Domain(format!("omega must be a finite non-negative number, got {omega}")));
    }
    Ok(())
}

pub(crate) fn check_marginal_moments(m: &MomentEstimates) -> Result<()> {
    if !(m.b1_xz > 0.0 && m.b1_x2z > 0.0) {
        return Err(Error::Domain(format!(
            "moments must be positive (b1_xz = {}, b1_x2z = {})",
            m.b1_xz, m.b1_x2z
        )));
    }
    Ok(())
}

/// `b1(Σ_X²Σ_Z)/b1²(Σ_XΣ_Z) + ω/(h²_β b1(Σ_XΣ_Z))`, the inverse square of `S`.
pub fn theorem1_bracket(h2_beta: f64, omega: f64, m: &MomentEstimates) -> f64 {
    m.b1_x2z / (m.b1_xz * m.b1_xz) + omega / (h2_beta * m.b1_xz)
}

/// Probability limit of the naive estimator `G` built from marginal summary statistics.
pub fn theorem1_limit(
    phi: f64,
    h2_beta: f64,
    h2_alpha: f64,
    omega: f64,
    m: &MomentEstimates,
) -> Result<f64> {
    check_common(phi, h2_beta, h2_alpha, omega)?;
    check_marginal_moments(m)?;
    Ok(phi * h2_alpha.sqrt() / theorem1_bracket(h2_beta, omega, m).sqrt())
}

/// `(V2 ω + V3 h²_β) / (V1² h²_β)`. `V1` enters squared so that the limit is
/// invariant to rescaling `(Σ̂_W + λI)⁻¹`, as a correlation must be.
pub fn theorem2_bracket(h2_beta: f64, omega: f64, v: &VParams) -> f64 {
    (v.v2 * omega + v.v3 * h2_beta) / (v.v1 * v.v1 * h2_beta)
}

/// Probability limit of the reference-panel estimator `G^W`.
pub fn theorem2_limit(phi: f64, h2_beta: f64, h2_alpha: f64, omega: f64, v: &VParams) -> Result<f64> {
    check_common(phi, h2_beta, h2_alpha, omega)?;
    v.validate()?;
    Ok(phi * h2_alpha.sqrt() / theorem2_bracket(h2_beta, omega, v).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageParams {
    pub omega: f64,
    pub h2_beta: f64,
    pub moments: MomentEstimates,
}

/// Coefficients of `S(t) = (ct + d) / sqrt(at + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl ShrinkageParams {
    pub fn new(omega: f64, h2_beta: f64, moments: MomentEstimates) -> Result<Self> {
        check_omega(omega)?;
        check_h2("h2_beta", h2_beta)?;
        let m = &moments;
        if !(m.b1_xz > 0.0 && m.b1_x2z > 0.0 && m.b2_x > 0.0 && m.b3_x > 0.0) {
            return Err(Error::Domain(
                "b1_xz, b1_x2z, b2_x and b3_x must all be positive".into(),
            ));
        }
        Ok(Self {
            omega,
            h2_beta,
            moments,
        })
    }

    pub fn coefficients(&self) -> PathCoefficients {
        let m = &self.moments;
        let k = self.omega / self.h2_beta;
        PathCoefficients {
            a: m.b3_x - m.b1_x2z + k * (m.b2_x - m.b1_xz),
            b: m.b1_x2z + k * m.b1_xz,
            c: m.b2_x - m.b1_xz,
            d: m.b1_xz,
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// `S(t)` for the mixed test-population LD `tΣ_X + (1−t)Σ_Z`.
pub fn shrinkage_path(t: f64, params: &ShrinkageParams) -> Result<f64> {
    check_t(t)?;
    let PathCoefficients { a, b, c, d } = params.coefficients();
    let num = a * t + b;
    let lin = c * t + d;
    if !(num > 0.0) || !(lin > 0.0) {
        return Err(Error::Domain(format!(
            "shrinkage path is undefined at t = {t} (numerator {num}, linear term {lin})"
        )));
    }
    Ok(lin / num.sqrt())
}

/// `dS/dt`. With `approx` the large-ω form `c / [2 (ω/h²_β)^{1/2} (ct+d)^{1/2}]`
/// is returned instead; it is only meaningful for `ω` of 10 or more.
pub fn shrinkage_derivative(t: f64, params: &ShrinkageParams, approx: bool) -> Result<f64> {
    check_t(t)?;
    let PathCoefficients { a, b, c, d } = params.coefficients();
    if approx {
        let k = params.omega / params.h2_beta;
        let lin = c * t + d;
        if !(k > 0.0 && lin > 0.0) {
            return Err(Error::Domain("large-omega approximation needs omega > 0 and ct + d > 0".into()));
        }
        return Ok(c / (2.0 * k.sqrt() * lin.sqrt()));
    }
    let num = a * t + b;
    if !(num > 0.0) {
        return Err(Error::Domain(format!("at + b = {num} is not positive at t = {t}")));
    }
    Ok((a * (c * t - d) + 2.0 * b * c) / (2.0 * num.powf(1.5)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub omega: f64,
    pub t: f64,
    pub s: f64,
    /// `φ h_α S(t)`, the limit of the naive estimator along the path.
    pub limit_g: f64,
}

pub const CURVE_HEADER: &str = "omega,t,S,limit_G";

/// Evaluate `S(t)` on the product grid, omega-major.
pub fn emit_shrinkage_curve(
    omega_grid: &[f64],
    t_grid: &[f64],
    h2_beta: f64,
    h2_alpha: f64,
    phi: f64,
    moments: &MomentEstimates,
) -> Result<Vec<CurveRow>> {
    if omega_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Domain("curve grids must be non-empty".into()));
    }
    check_common(phi, h2_beta, h2_alpha, 0.0)?;
    let mut rows = Vec::with_capacity(omega_grid.len() * t_grid.len());
    for &omega in omega_grid {
        let params = ShrinkageParams::new(omega, h2_beta, moments.clone())?;
        for &t in t_grid {
            let s = shrinkage_path(t, &params)?;
            rows.push(CurveRow {
                omega,
                t,
                s,
                limit_g: phi * h2_alpha.sqrt() * s,
            });
        }
    }
    Ok(rows)
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CURVE_HEADER.split(','))?;
    for r in rows {
        wtr.write_record([r.omega, r.t, r.s, r.limit_g].map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// `n` points evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
