//! Paired two-population cohort simulation: genotypes with a target LD
//! structure, correlated sparse effect vectors and calibrated traits.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ld::{is_identity, matrix_sqrt, CovarianceMatrix};
use crate::seed::{derive_seed, rng};

const STANDARDIZE_TOL: f64 = 1e-10;
const MAX_COLUMN_RESAMPLES: usize = 10;
const UNIFORM_CHUNK: usize = 1024;

/// `n x p` genotype panel with per-variant minor allele frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    values: DMatrix<f64>,
    maf: Vec<f64>,
    ids: Vec<String>,
    standardized: bool,
}

impl GenotypeMatrix {
    /// Wrap raw values. When `standardized` is claimed it is verified.
    pub fn new(values: DMatrix<f64>, maf: Vec<f64>, standardized: bool) -> Result<Self> {
        let ids = (1..=values.ncols()).map(|j| format!("v{j}")).collect();
        Self::with_ids(values, maf, ids, standardized)
    }

    pub fn with_ids(
        values: DMatrix<f64>,
        maf: Vec<f64>,
        ids: Vec<String>,
        standardized: bool,
    ) -> Result<Self> {
        let p = values.ncols();
        if maf.len() != p || ids.len() != p {
            return Err(Error::Shape(format!(
                "{p} columns but {} MAF values and {} variant ids",
                maf.len(),
                ids.len()
            )));
        }
        if let Some(f) = maf.iter().find(|f| !(**f > 0.0 && **f <= 0.5)) {
            return Err(Error::Domain(format!("MAF {f} outside (0, 0.5]")));
        }
        if standardized {
            check_standardized(&values)?;
        }
        Ok(Self {
            values,
            maf,
            ids,
            standardized,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn maf(&self) -> &[f64] {
        &self.maf
    }

    pub fn variant_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Exact column standardization: sample mean 0, variance 1 (divisor n).
    pub fn standardize(mut self) -> Result<Self> {
        standardize_columns(&mut self.values)?;
        self.standardized = true;
        Ok(self)
    }

    /// Rows `range` as a new panel, re-standardized.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let sub = self.values.rows(range.start, range.len()).into_owned();
        GenotypeMatrix {
            values: sub,
            maf: self.maf.clone(),
            ids: self.ids.clone(),
            standardized: false,
        }
        .standardize()
    }

    /// Vertical concatenation, re-standardized.
    pub fn stack(a: &GenotypeMatrix, b: &GenotypeMatrix) -> Result<Self> {
        if a.p() != b.p() {
            return Err(Error::Shape(format!("cannot stack p={} with p={}", a.p(), b.p())));
        }
        let mut values = DMatrix::zeros(a.n() + b.n(), a.p());
        values.rows_mut(0, a.n()).copy_from(&a.values);
        values.rows_mut(a.n(), b.n()).copy_from(&b.values);
        GenotypeMatrix {
            values,
            maf: a.maf.clone(),
            ids: a.ids.clone(),
            standardized: false,
        }
        .standardize()
    }

    /// Right-multiply by a block-diagonal matrix, block by block.
    /// Identity blocks are skipped.
    pub fn transform(&self, cov: &CovarianceMatrix) -> Result<Self> {
        if cov.dim() != self.p() {
            return Err(Error::Shape(format!(
                "transform of dimension {} applied to {} variants",
                cov.dim(),
                self.p()
            )));
        }
        let mut values = self.values.clone();
        apply_blockwise(&mut values, cov);
        Ok(GenotypeMatrix {
            values,
            maf: self.maf.clone(),
            ids: self.ids.clone(),
            standardized: false,
        })
    }
}

fn apply_blockwise(values: &mut DMatrix<f64>, cov: &CovarianceMatrix) {
    for (range, block) in cov.partition().offsets().zip(cov.blocks()) {
        if is_identity(block) {
            continue;
        }
        let product = values.columns(range.start, range.len()) * block;
        values.columns_mut(range.start, range.len()).copy_from(&product);
    }
}

fn check_standardized(values: &DMatrix<f64>) -> Result<()> {
    let n = values.nrows() as f64;
    for (j, col) in values.column_iter().enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if mean.abs() > STANDARDIZE_TOL || (var - 1.0).abs() > STANDARDIZE_TOL {
            return Err(Error::State(format!(
                "column {j} is not standardized (mean {mean:e}, variance {var})"
            )));
        }
    }
    Ok(())
}

/// Center and scale every column to mean 0 and variance 1 (divisor n).
pub fn standardize_columns(values: &mut DMatrix<f64>) -> Result<()> {
    let n = values.nrows();
    if n == 0 {
        return Ok(());
    }
    for (j, col) in values.as_mut_slice().chunks_mut(n).enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / n as f64).sqrt();
        if sd == 0.0 || !sd.is_finite() {
            return Err(Error::Degenerate(format!("column {j} is constant")));
        }
        let inv = 1.0 / sd;
        for v in col.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Ok(())
}

/// Simulate an `n x p` panel: per-variant MAF from `U[maf_low, maf_high]`,
/// genotypes in {0,1,2} under Hardy-Weinberg proportions, standardized to
/// `X₀`, mapped to `X₀ Σ^{1/2}` and re-standardized.
pub fn sample_genotypes(
    n: usize,
    p: usize,
    maf_low: f64,
    maf_high: f64,
    cov: &CovarianceMatrix,
    seed: u64,
) -> Result<GenotypeMatrix> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    if !(0.0 < maf_low && maf_low <= maf_high && maf_high <= 0.5) {
        return Err(Error::Domain(format!(
            "MAF bounds must satisfy 0 < low <= high <= 0.5, got [{maf_low}, {maf_high}]"
        )));
    }
    if cov.dim() != p {
        return Err(Error::Shape(format!("covariance has dimension {}, p = {p}", cov.dim())));
    }
    sample_genotypes_from_root(n, maf_low, maf_high, &matrix_sqrt(cov)?, seed)
}

/// As [`sample_genotypes`] with a precomputed `Σ^{1/2}`, so repeated draws
/// from one LD structure skip the eigendecompositions.
pub fn sample_genotypes_from_root(
    n: usize,
    maf_low: f64,
    maf_high: f64,
    root: &CovarianceMatrix,
    seed: u64,
) -> Result<GenotypeMatrix> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    if !(0.0 < maf_low && maf_low <= maf_high && maf_high <= 0.5) {
        return Err(Error::Domain(format!(
            "MAF bounds must satisfy 0 < low <= high <= 0.5, got [{maf_low}, {maf_high}]"
        )));
    }
    let p = root.dim();

    let mut r = rng(derive_seed(seed, "genotypes"));
    let mut maf = Vec::with_capacity(p);
    let mut values = DMatrix::<f64>::zeros(n, p);
    let mut buf = [0u32; UNIFORM_CHUNK];
    for j in 0..p {
        let f = if maf_low == maf_high {
            maf_low
        } else {
            r.random_range(maf_low..maf_high)
        };
        maf.push(f);
        // Hardy-Weinberg cut points on the u32 scale: P(0) = (1-f)², P(≤1) = 1 - f².
        let t0 = ((1.0 - f) * (1.0 - f) * 4294967296.0) as u64;
        let t1 = ((1.0 - f * f) * 4294967296.0) as u64;
        let col = &mut values.as_mut_slice()[j * n..(j + 1) * n];
        let mut attempts = 0;
        loop {
            for chunk in col.chunks_mut(UNIFORM_CHUNK) {
                let words = &mut buf[..chunk.len()];
                r.fill(words);
                for (v, &u) in chunk.iter_mut().zip(words.iter()) {
                    let u = u64::from(u);
                    *v = f64::from(u8::from(u >= t0) + u8::from(u >= t1));
                }
            }
            let first = col[0];
            if col.iter().any(|&v| v != first) {
                break;
            }
            attempts += 1;
            if attempts > MAX_COLUMN_RESAMPLES {
                return Err(Error::Degenerate(format!(
                    "variant {j} stayed monomorphic after {MAX_COLUMN_RESAMPLES} resamples (MAF {f}, n {n})"
                )));
            }
        }
    }
    standardize_columns(&mut values)?;
    apply_blockwise(&mut values, root);
    standardize_columns(&mut values)?;
    GenotypeMatrix::new(values, maf, false).map(|mut g| {
        g.standardized = true;
        g
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectDistribution {
    Gaussian,
    /// Scaled Student-t with a shared scale per variant pair; `df >= 5`.
    StudentT { df: f64 },
}

impl EffectDistribution {
    pub fn student_t(df: f64) -> Result<Self> {
        if !(df >= 5.0) {
            return Err(Error::Domain(format!("Student-t effects need df >= 5, got {df}")));
        }
        Ok(EffectDistribution::StudentT { df })
    }
}

/// Diagonal (co)variance specification of the effect pair. Per-variant
/// variances are on the `Φ` scale: the sampled coordinate variance is `Φ_ii / p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectModel {
    p: usize,
    var_beta: Vec<f64>,
    var_alpha: Vec<f64>,
    cov_cross: Vec<f64>,
    distribution: EffectDistribution,
}

impl EffectModel {
    pub fn from_variances(
        var_beta: Vec<f64>,
        var_alpha: Vec<f64>,
        cov_cross: Vec<f64>,
        distribution: EffectDistribution,
    ) -> Result<Self> {
        let p = var_beta.len();
        if p == 0 || var_alpha.len() != p || cov_cross.len() != p {
            return Err(Error::Shape("effect variance vectors must share a positive length".into()));
        }
        for i in 0..p {
            let (vb, va, c) = (var_beta[i], var_alpha[i], cov_cross[i]);
            if !(vb >= 0.0 && va >= 0.0 && c.is_finite()) {
                return Err(Error::Domain(format!("invalid variances at variant {i}")));
            }
            if (vb == 0.0 || va == 0.0) && c != 0.0 {
                return Err(Error::Domain(format!(
                    "variant {i} has a cross covariance but a null effect"
                )));
            }
            if c.abs() > (vb * va).sqrt() * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "variant {i}: |cov| {c} exceeds sqrt(var_beta var_alpha)"
                )));
            }
        }
        if var_beta.iter().all(|&v| v == 0.0) || var_alpha.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate("an effect vector has empty support".into()));
        }
        Ok(Self {
            p,
            var_beta,
            var_alpha,
            cov_cross,
            distribution,
        })
    }

    /// Unit variances on random supports of sizes `round(s·p)`. With
    /// `overlap = Some(δ)` exactly `round(δ·p)` variants are shared;
    /// otherwise the supports are drawn independently. Shared variants get
    /// correlation `target_corr / κ_βα`, which must lie in `[-1, 1]`.
    pub fn random_supports(
        p: usize,
        sparsity_beta: f64,
        sparsity_alpha: f64,
        target_corr: f64,
        overlap: Option<f64>,
        distribution: EffectDistribution,
        seed: u64,
    ) -> Result<Self> {
        for (name, s) in [("sparsity_beta", sparsity_beta), ("sparsity_alpha", sparsity_alpha)] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1], got {s}")));
            }
        }
        if !(-1.0..=1.0).contains(&target_corr) {
            return Err(Error::Domain(format!("target_corr must lie in [-1, 1], got {target_corr}")));
        }
        let count = |s: f64| ((s * p as f64).round() as usize).clamp(1, p);
        let (m_b, m_a) = (count(sparsity_beta), count(sparsity_alpha));
        let mut r = rng(derive_seed(seed, "supports"));

        let mut in_beta = vec![false; p];
        let mut in_alpha = vec![false; p];
        match overlap {
            Some(delta) => {
                if !(0.0..=1.0).contains(&delta) {
                    return Err(Error::Domain(format!("overlap must lie in [0, 1], got {delta}")));
                }
                let m_ba = (delta * p as f64).round() as usize;
                if m_ba > m_b.min(m_a) || m_b + m_a - m_ba > p {
                    return Err(Error::Domain(format!(
                        "overlap of {m_ba} variants is incompatible with supports of {m_b} and {m_a} out of {p}"
                    )));
                }
                let order = sample_indices(&mut r, p, m_b + m_a - m_ba).into_vec();
                for &i in &order[..m_b] {
                    in_beta[i] = true;
                }
                for &i in &order[..m_ba] {
                    in_alpha[i] = true;
                }
                for &i in &order[m_b..] {
                    in_alpha[i] = true;
                }
            }
            None => {
                for i in sample_indices(&mut r, p, m_b) {
                    in_beta[i] = true;
                }
                for i in sample_indices(&mut r, p, m_a) {
                    in_alpha[i] = true;
                }
            }
        }
        let m_ba = in_beta.iter().zip(&in_alpha).filter(|(b, a)| **b && **a).count();
        let kappa = m_ba as f64 / ((m_b * m_a) as f64).sqrt();
        let rho = if target_corr == 0.0 {
            0.0
        } else if target_corr.abs() > kappa * (1.0 + 1e-12) {
            return Err(Error::Infeasible {
                target: target_corr,
                bound: kappa,
            });
        } else {
            (target_corr / kappa).clamp(-1.0, 1.0)
        };
        let var_beta: Vec<f64> = in_beta.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let var_alpha: Vec<f64> = in_alpha.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        let cov_cross = in_beta
            .iter()
            .zip(&in_alpha)
            .map(|(&b, &a)| if b && a { rho } else { 0.0 })
            .collect();
        Self::from_variances(var_beta, var_alpha, cov_cross, distribution)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn var_beta(&self) -> &[f64] {
        &self.var_beta
    }

    pub fn var_alpha(&self) -> &[f64] {
        &self.var_alpha
    }

    pub fn cov_cross(&self) -> &[f64] {
        &self.cov_cross
    }

    pub fn distribution(&self) -> EffectDistribution {
        self.distribution
    }

    pub fn m_beta(&self) -> usize {
        self.var_beta.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn m_alpha(&self) -> usize {
        self.var_alpha.iter().filter(|&&v| v > 0.0).count()
    }

    /// Variants where both effects are nonzero.
    pub fn m_beta_alpha(&self) -> usize {
        self.var_beta
            .iter()
            .zip(&self.var_alpha)
            .filter(|(b, a)| **b > 0.0 && **a > 0.0)
            .count()
    }

    pub fn sparsity_beta(&self) -> f64 {
        self.m_beta() as f64 / self.p as f64
    }

    pub fn sparsity_alpha(&self) -> f64 {
        self.m_alpha() as f64 / self.p as f64
    }

    pub fn kappa_beta(&self) -> f64 {
        self.sparsity_beta()
    }

    pub fn kappa_alpha(&self) -> f64 {
        self.sparsity_alpha()
    }

    pub fn delta_beta_alpha(&self) -> f64 {
        self.m_beta_alpha() as f64 / self.p as f64
    }

    pub fn kappa_beta_alpha(&self) -> f64 {
        self.m_beta_alpha() as f64 / ((self.m_beta() * self.m_alpha()) as f64).sqrt()
    }

    /// `tr(Φ_βα) / sqrt(tr(Φ_ββ) tr(Φ_αα))`.
    pub fn target_corr(&self) -> f64 {
        let tb: f64 = self.var_beta.iter().sum();
        let ta: f64 = self.var_alpha.iter().sum();
        self.cov_cross.iter().sum::<f64>() / (tb * ta).sqrt()
    }

    /// Per-variant `E[α²β²] − 2(E αβ)² − E α² E β²` on the sampled scale.
    pub fn kurtosis_correction(&self) -> Vec<f64> {
        let p2 = (self.p * self.p) as f64;
        match self.distribution {
            EffectDistribution::Gaussian => vec![0.0; self.p],
            EffectDistribution::StudentT { df } => (0..self.p)
                .map(|i| {
                    let (vb, va, c) = (self.var_beta[i], self.var_alpha[i], self.cov_cross[i]);
                    if vb == 0.0 || va == 0.0 {
                        return 0.0;
                    }
                    let r2 = c * c / (vb * va);
                    vb * va / p2 * (1.0 + 2.0 * r2) * 2.0 / (df - 4.0)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectPair {
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
}

/// Draw `(β, α)` from the model. Variant `i` has coordinate variances
/// `var_beta_i / p`, `var_alpha_i / p` and correlation
/// `cov_cross_i / sqrt(var_beta_i var_alpha_i)`.
pub fn sample_effect_pair(model: &EffectModel, seed: u64) -> EffectPair {
    let p = model.p;
    let mut r = rng(derive_seed(seed, "effects"));
    let chi = match model.distribution {
        EffectDistribution::StudentT { df } => Some((ChiSquared::new(df).expect("df >= 5"), df)),
        EffectDistribution::Gaussian => None,
    };
    let mut beta = DVector::zeros(p);
    let mut alpha = DVector::zeros(p);
    let pf = p as f64;
    for i in 0..p {
        let (vb, va, c) = (model.var_beta[i], model.var_alpha[i], model.cov_cross[i]);
        if vb == 0.0 && va == 0.0 {
            continue;
        }
        let z1: f64 = StandardNormal.sample(&mut r);
        let z2: f64 = StandardNormal.sample(&mut r);
        let scale = match &chi {
            Some((dist, df)) => {
                let w: f64 = dist.sample(&mut r) / df;
                ((df - 2.0) / df / w).sqrt()
            }
            None => 1.0,
        };
        if vb > 0.0 && va > 0.0 {
            let rho = (c / (vb * va).sqrt()).clamp(-1.0, 1.0);
            beta[i] = (vb / pf).sqrt() * scale * z1;
            alpha[i] = (va / pf).sqrt() * scale * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        } else if vb > 0.0 {
            beta[i] = (vb / pf).sqrt() * scale * z1;
        } else {
            alpha[i] = (va / pf).sqrt() * scale * z2;
        }
    }
    EffectPair { beta, alpha }
}

/// Phenotype vector with the heritability it was calibrated to.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitVector {
    pub values: DVector<f64>,
    pub h2_target: Option<f64>,
    pub noise_var: f64,
}

impl TraitVector {
    pub fn observed(values: DVector<f64>) -> Self {
        Self {
            values,
            h2_target: None,
            noise_var: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// `y = Xβ + ε` with `Var(ε) = var(Xβ)(1 − h²)/h²` from the realized genetic variance.
pub fn synthesize_traits(
    geno: &GenotypeMatrix,
    effects: &DVector<f64>,
    h2: f64,
    seed: u64,
) -> Result<TraitVector> {
    if !(h2 > 0.0 && h2 <= 1.0) {
        return Err(Error::Domain(format!("h2 must lie in (0, 1], got {h2}")));
    }
    if effects.len() != geno.p() {
        return Err(Error::Shape(format!(
            "{} effects for {} variants",
            effects.len(),
            geno.p()
        )));
    }
    let g = geno.values() * effects;
    let var_g = sample_variance(&g);
    if !(var_g > 0.0) {
        return Err(Error::Degenerate("genetic values have zero variance".into()));
    }
    let noise_var = var_g * (1.0 - h2) / h2;
    let mut values = g;
    if noise_var > 0.0 {
        let sd = noise_var.sqrt();
        let mut r = rng(derive_seed(seed, "noise"));
        for v in values.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut r);
            *v += sd * e;
        }
    }
    Ok(TraitVector {
        values,
        h2_target: Some(h2),
        noise_var,
    })
}
