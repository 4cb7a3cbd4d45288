//! Flat `section.key=value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ld::{build_ar_blocks, CovSource, CovarianceMatrix};
use crate::moments::Provenance;
use crate::sim::EffectDistribution;

/// Seven unequal LD blocks summing to the desk-scale `p = 2000`.
pub const DESK_BLOCK_SIZES: [usize; 7] = [200, 250, 280, 300, 320, 300, 350];
pub const DESK_RHO_X: [f64; 7] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
pub const DESK_RHO_Z: [f64; 7] = [0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2];

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "id",
    "dims.n",
    "dims.n_z",
    "dims.n_w",
    "dims.p",
    "ld.x.blocks",
    "ld.x.rho",
    "ld.x.file",
    "ld.z.blocks",
    "ld.z.rho",
    "ld.z.file",
    "genotypes.maf_low",
    "genotypes.maf_high",
    "effects.sparsity_beta",
    "effects.sparsity_alpha",
    "effects.target_corr",
    "effects.overlap",
    "effects.distribution",
    "traits.h2_beta",
    "traits.h2_alpha",
    "estimators.marginal",
    "estimators.center",
    "estimators.moments",
    "estimators.panels",
    "replicates",
    "base_seed",
    "output_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub enum LdSpec {
    /// AR blocks; a single `rho` is shared by every block.
    Ar { sizes: Vec<usize>, rhos: Vec<f64> },
    /// Covariance CSV as written by [`CovarianceMatrix::write_csv`].
    File(PathBuf),
}

impl LdSpec {
    pub fn build(&self) -> Result<CovarianceMatrix> {
        match self {
            LdSpec::Ar { sizes, rhos } => {
                let rhos = if rhos.len() == 1 {
                    vec![rhos[0]; sizes.len()]
                } else {
                    rhos.clone()
                };
                build_ar_blocks(sizes, &rhos)
            }
            LdSpec::File(path) => {
                let f = std::fs::File::open(path)
                    .map_err(|e| Error::data(path, format!("cannot open LD file: {e}")))?;
                CovarianceMatrix::read_csv(std::io::BufReader::new(f), CovSource::SyntheticBlock)
                    .map_err(|e| Error::data(path, e.to_string()))
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            LdSpec::Ar { sizes, .. } => Some(sizes.iter().sum()),
            LdSpec::File(_) => None,
        }
    }
}

/// How the two effect supports overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Overlap {
    /// As many shared variants as the smaller support allows.
    Max,
    Independent,
    Fraction(f64),
}

impl Overlap {
    pub fn resolve(self, sparsity_beta: f64, sparsity_alpha: f64) -> Option<f64> {
        match self {
            Overlap::Max => Some(sparsity_beta.min(sparsity_alpha)),
            Overlap::Independent => None,
            Overlap::Fraction(d) => Some(d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PanelKind {
    RefX,
    RefZ,
    RefMixed,
}

impl PanelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PanelKind::RefX => "ref-x",
            PanelKind::RefZ => "ref-z",
            PanelKind::RefMixed => "ref-mixed",
        }
    }
}

impl FromStr for PanelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref-x" => Ok(PanelKind::RefX),
            "ref-z" => Ok(PanelKind::RefZ),
            "ref-mixed" => Ok(PanelKind::RefMixed),
            _ => Err(Error::Config(format!(
                "unknown panel kind '{s}' (expected ref-x, ref-z or ref-mixed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelSpec {
    pub kind: PanelKind,
    pub lambda: f64,
}

impl PanelSpec {
    /// Label used in `config_id`, e.g. `ref-x@0.1`.
    pub fn label(&self) -> String {
        format!("{}@{}", self.kind.as_str(), self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub n: usize,
    pub n_z: usize,
    pub n_w: usize,
    pub p: usize,
    pub ld_x: LdSpec,
    pub ld_z: LdSpec,
    pub maf_low: f64,
    pub maf_high: f64,
    pub sparsity_beta: f64,
    pub sparsity_alpha: f64,
    pub target_corr: f64,
    pub overlap: Overlap,
    pub distribution: EffectDistribution,
    pub h2_beta: f64,
    pub h2_alpha: f64,
    pub marginal: bool,
    pub center: bool,
    pub moments: Provenance,
    pub panels: Vec<PanelSpec>,
    pub replicates: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            id: "run".into(),
            n: 20_000,
            n_z: 500,
            n_w: 2_000,
            p: 2_000,
            ld_x: LdSpec::Ar {
                sizes: DESK_BLOCK_SIZES.to_vec(),
                rhos: DESK_RHO_X.to_vec(),
            },
            ld_z: LdSpec::Ar {
                sizes: DESK_BLOCK_SIZES.to_vec(),
                rhos: DESK_RHO_Z.to_vec(),
            },
            maf_low: 0.05,
            maf_high: 0.45,
            sparsity_beta: 0.1,
            sparsity_alpha: 0.1,
            target_corr: 0.5,
            overlap: Overlap::Max,
            distribution: EffectDistribution::Gaussian,
            h2_beta: 0.6,
            h2_alpha: 0.6,
            marginal: true,
            center: true,
            moments: Provenance::PopulationExact,
            panels: Vec::new(),
            replicates: 200,
            base_seed: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Apply a single `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "id" => {
                if v.is_empty() || v.contains(',') {
                    return Err(Error::Config(format!("id must be non-empty without commas, got '{v}'")));
                }
                self.id = v.to_string();
            }
            "dims.n" => self.n = parse(key, v)?,
            "dims.n_z" => self.n_z = parse(key, v)?,
            "dims.n_w" => self.n_w = parse(key, v)?,
            "dims.p" => self.p = parse(key, v)?,
            "ld.x.blocks" | "ld.z.blocks" | "ld.x.rho" | "ld.z.rho" => {
                let spec = if key.starts_with("ld.x") { &mut self.ld_x } else { &mut self.ld_z };
                let (mut sizes, mut rhos) = match spec {
                    LdSpec::Ar { sizes, rhos } => (sizes.clone(), rhos.clone()),
                    LdSpec::File(_) => (DESK_BLOCK_SIZES.to_vec(), vec![0.0]),
                };
                if key.ends_with("blocks") {
                    sizes = parse_list(key, v)?;
                } else {
                    rhos = parse_list(key, v)?;
                }
                *spec = LdSpec::Ar { sizes, rhos };
            }
            "ld.x.file" => self.ld_x = LdSpec::File(PathBuf::from(v)),
            "ld.z.file" => self.ld_z = LdSpec::File(PathBuf::from(v)),
            "genotypes.maf_low" => self.maf_low = parse(key, v)?,
            "genotypes.maf_high" => self.maf_high = parse(key, v)?,
            "effects.sparsity_beta" => self.sparsity_beta = parse(key, v)?,
            "effects.sparsity_alpha" => self.sparsity_alpha = parse(key, v)?,
            "effects.target_corr" => self.target_corr = parse(key, v)?,
            "effects.overlap" => {
                self.overlap = match v {
                    "max" => Overlap::Max,
                    "independent" => Overlap::Independent,
                    _ => Overlap::Fraction(parse(key, v)?),
                }
            }
            "effects.distribution" => {
                self.distribution = if v == "gaussian" {
                    EffectDistribution::Gaussian
                } else if let Some(df) = v.strip_prefix("t:") {
                    EffectDistribution::student_t(parse(key, df)?)
                        .map_err(|e| Error::Config(format!("{key}: {e}")))?
                } else {
                    return Err(Error::Config(format!("{key}: expected gaussian or t:<df>, got '{v}'")));
                }
            }
            "traits.h2_beta" => self.h2_beta = parse(key, v)?,
            "traits.h2_alpha" => self.h2_alpha = parse(key, v)?,
            "estimators.marginal" => self.marginal = parse_bool(key, v)?,
            "estimators.center" => self.center = parse_bool(key, v)?,
            "estimators.moments" => {
                self.moments = match v {
                    "exact" => Provenance::PopulationExact,
                    "sample" => Provenance::SampleDebiased,
                    _ => return Err(Error::Config(format!("{key}: expected exact or sample, got '{v}'"))),
                }
            }
            "estimators.panels" => {
                self.panels = if v.is_empty() || v == "none" {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|entry| {
                            let (kind, lambda) = entry.trim().split_once(':').ok_or_else(|| {
                                Error::Config(format!("{key}: expected kind:lambda, got '{entry}'"))
                            })?;
                            Ok(PanelSpec {
                                kind: kind.parse()?,
                                lambda: parse(key, lambda)?,
                            })
                        })
                        .collect::<Result<_>>()?
                }
            }
            "replicates" => self.replicates = parse(key, v)?,
            "base_seed" => self.base_seed = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.n < 2 || self.n_z < 2 || self.p < 1 {
            return bad(format!("need n >= 2, n_z >= 2, p >= 1; got n={} n_z={} p={}", self.n, self.n_z, self.p));
        }
        if !self.panels.is_empty() && self.n_w < 4 {
            return bad(format!("reference panels need n_w >= 4, got {}", self.n_w));
        }
        for (name, spec) in [("ld.x", &self.ld_x), ("ld.z", &self.ld_z)] {
            if let LdSpec::Ar { sizes, rhos } = spec {
                if rhos.len() != 1 && rhos.len() != sizes.len() {
                    return bad(format!("{name}: {} rho values for {} blocks", rhos.len(), sizes.len()));
                }
                if let Some(r) = rhos.iter().find(|r| !(0.0..1.0).contains(*r)) {
                    return bad(format!("{name}.rho: {r} outside [0, 1)"));
                }
            }
            if let Some(d) = spec.dim() {
                if d != self.p {
                    return bad(format!("{name}.blocks sum to {d}, dims.p = {}", self.p));
                }
            }
        }
        if !(0.0 < self.maf_low && self.maf_low <= self.maf_high && self.maf_high <= 0.5) {
            return bad(format!("MAF bounds [{}, {}] invalid", self.maf_low, self.maf_high));
        }
        for (name, s) in [("sparsity_beta", self.sparsity_beta), ("sparsity_alpha", self.sparsity_alpha)] {
            if !(s > 0.0 && s <= 1.0) {
                return bad(format!("effects.{name} must lie in (0, 1], got {s}"));
            }
        }
        if !(-1.0..=1.0).contains(&self.target_corr) {
            return bad(format!("effects.target_corr must lie in [-1, 1], got {}", self.target_corr));
        }
        if let Overlap::Fraction(d) = self.overlap {
            if !(0.0..=1.0).contains(&d) {
                return bad(format!("effects.overlap must lie in [0, 1], got {d}"));
            }
        }
        for (name, h) in [("h2_beta", self.h2_beta), ("h2_alpha", self.h2_alpha)] {
            if !(h > 0.0 && h <= 1.0) {
                return bad(format!("traits.{name} must lie in (0, 1], got {h}"));
            }
        }
        if let Some(pn) = self.panels.iter().find(|pn| !(pn.lambda > 0.0 && pn.lambda.is_finite())) {
            return bad(format!("panel {} needs lambda > 0", pn.label()));
        }
        if !self.marginal && self.panels.is_empty() {
            return bad("no estimators configured".into());
        }
        Ok(())
    }

    /// Canonical text form: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("id", self.id.clone());
        m.insert("dims.n", self.n.to_string());
        m.insert("dims.n_z", self.n_z.to_string());
        m.insert("dims.n_w", self.n_w.to_string());
        m.insert("dims.p", self.p.to_string());
        for (prefix, spec) in [("x", &self.ld_x), ("z", &self.ld_z)] {
            match spec {
                LdSpec::Ar { sizes, rhos } => {
                    m.insert(if prefix == "x" { "ld.x.blocks" } else { "ld.z.blocks" }, join(sizes));
                    m.insert(if prefix == "x" { "ld.x.rho" } else { "ld.z.rho" }, join(rhos));
                }
                LdSpec::File(path) => {
                    m.insert(if prefix == "x" { "ld.x.file" } else { "ld.z.file" }, path.display().to_string());
                }
            }
        }
        m.insert("genotypes.maf_low", self.maf_low.to_string());
        m.insert("genotypes.maf_high", self.maf_high.to_string());
        m.insert("effects.sparsity_beta", self.sparsity_beta.to_string());
        m.insert("effects.sparsity_alpha", self.sparsity_alpha.to_string());
        m.insert("effects.target_corr", self.target_corr.to_string());
        m.insert(
            "effects.overlap",
            match self.overlap {
                Overlap::Max => "max".into(),
                Overlap::Independent => "independent".into(),
                Overlap::Fraction(d) => d.to_string(),
            },
        );
        m.insert(
            "effects.distribution",
            match self.distribution {
                EffectDistribution::Gaussian => "gaussian".into(),
                EffectDistribution::StudentT { df } => format!("t:{df}"),
            },
        );
        m.insert("traits.h2_beta", self.h2_beta.to_string());
        m.insert("traits.h2_alpha", self.h2_alpha.to_string());
        m.insert("estimators.marginal", self.marginal.to_string());
        m.insert("estimators.center", self.center.to_string());
        m.insert(
            "estimators.moments",
            match self.moments {
                Provenance::PopulationExact => "exact".into(),
                Provenance::SampleDebiased => "sample".into(),
            },
        );
        let panels: Vec<String> = self
            .panels
            .iter()
            .map(|pn| format!("{}:{}", pn.kind.as_str(), pn.lambda))
            .collect();
        m.insert("estimators.panels", if panels.is_empty() { "none".into() } else { panels.join(",") });
        m.insert("replicates", self.replicates.to_string());
        m.insert("base_seed", self.base_seed.to_string());
        m.insert("output_dir", self.output_dir.display().to_string());
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    /// Parse `key=value` lines over the desk defaults. Blank lines and `#`
    /// comments are skipped; unknown or repeated keys are errors.
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key '{k}' given twice", lineno + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip_prefix(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
