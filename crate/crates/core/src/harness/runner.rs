//! Replicated simulation: per-replicate cohorts, estimators, raw rows and
//! the aggregated summary table.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    compute_v_params, correct_marginal, correct_reference, marginal_summary_stats, predict_traits,
    ridge_adjust, trait_correlation, variance_corrected, VarianceInputs,
};
use crate::harness::config::{ExperimentConfig, PanelKind, PanelSpec};
use crate::harness::manifest::Manifest;
use crate::ld::{estimate_covariance, matrix_sqrt, merge_ld_blocks, BlockPartition, CovarianceMatrix};
use crate::moments::{blockwise_moments, MomentEstimates, Provenance, Status};
use crate::seed::{derive_seed, replicate_seed};
use crate::shrinkage::theorem1_limit;
use crate::sim::{
    sample_effect_pair, sample_genotypes_from_root, synthesize_traits, EffectModel, GenotypeMatrix,
};

pub const RESULTS_HEADER: &str =
    "config_id,replicate,g_naive,g_corrected,g_w,g_mw,h2_beta,h2_alpha,omega,lambda,status";

pub const SUMMARY_HEADER: &str = "config_id,replicates,n_ok,n_warned,n_failed,\
g_naive_mean,g_naive_sd,g_corrected_mean,g_corrected_sd,g_w_mean,g_w_sd,g_mw_mean,g_mw_sd,\
theory_g,theory_var_corrected";

/// Written for undefined values, e.g. the spread of a single replicate.
pub const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Warned,
    Failed,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Warned => "warned",
            RowStatus::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(RowStatus::Ok),
            "warned" => Ok(RowStatus::Warned),
            "failed" => Ok(RowStatus::Failed),
            _ => Err(Error::Numerical(format!("unknown status '{s}'"))),
        }
    }
}

impl From<Status> for RowStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Ok => RowStatus::Ok,
            Status::Warned => RowStatus::Warned,
        }
    }
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One estimator family in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub config_id: String,
    pub replicate: usize,
    pub g_naive: Option<f64>,
    pub g_corrected: Option<f64>,
    pub g_w: Option<f64>,
    pub g_mw: Option<f64>,
    pub h2_beta: f64,
    pub h2_alpha: f64,
    pub omega: f64,
    pub lambda: Option<f64>,
    pub status: RowStatus,
    /// Failure reason; not part of the CSV.
    pub error: Option<String>,
}

impl ReplicateRow {
    fn values(&self) -> [Option<f64>; 4] {
        [self.g_naive, self.g_corrected, self.g_w, self.g_mw]
    }
}

/// Mean and sample SD of one column over the usable replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    /// `None` with fewer than two values.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config_id: String,
    pub replicates: usize,
    pub n_ok: usize,
    pub n_warned: usize,
    pub n_failed: usize,
    /// `g_naive`, `g_corrected`, `g_w`, `g_mw`.
    pub columns: [Option<ColumnStats>; 4],
    pub theory_g: Option<f64>,
    pub theory_var_corrected: Option<f64>,
}

impl SummaryRow {
    pub fn g_naive(&self) -> Option<ColumnStats> {
        self.columns[0]
    }
    pub fn g_corrected(&self) -> Option<ColumnStats> {
        self.columns[1]
    }
    pub fn g_w(&self) -> Option<ColumnStats> {
        self.columns[2]
    }
    pub fn g_mw(&self) -> Option<ColumnStats> {
        self.columns[3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub raw: Vec<ReplicateRow>,
    /// Where the raw rows were written, when they were.
    pub raw_path: Option<PathBuf>,
}

impl SummaryTable {
    pub fn row(&self, config_id: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.config_id == config_id)
    }
}

/// Everything a replicate needs that does not depend on its seed.
pub struct Prepared {
    pub x_cov: CovarianceMatrix,
    pub z_cov: CovarianceMatrix,
    pub merged: BlockPartition,
    pub root_x: CovarianceMatrix,
    pub root_z: CovarianceMatrix,
    /// Population moments on the merged partition.
    pub moments: MomentEstimates,
    pub omega: f64,
    /// Effect model drawn with the replicate-0 seed.
    pub model0: EffectModel,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let x_cov = cfg.ld_x.build()?;
        let z_cov = cfg.ld_z.build()?;
        for (name, c) in [("ld.x", &x_cov), ("ld.z", &z_cov)] {
            if c.dim() != cfg.p {
                return Err(Error::Config(format!("{name} has dimension {}, dims.p = {}", c.dim(), cfg.p)));
            }
        }
        let merged = merge_ld_blocks(x_cov.partition(), z_cov.partition())?;
        let (xm, zm) = (x_cov.reblock(&merged)?, z_cov.reblock(&merged)?);
        let moments = blockwise_moments(&xm, &zm, cfg.n, Provenance::PopulationExact)?;
        let model0 = effect_model(cfg, replicate_seed(cfg.base_seed, 0))?;
        Ok(Self {
            root_x: matrix_sqrt(&x_cov)?,
            root_z: matrix_sqrt(&z_cov)?,
            x_cov,
            z_cov,
            merged,
            moments,
            omega: cfg.p as f64 / cfg.n as f64,
            model0,
        })
    }
}

fn effect_model(cfg: &ExperimentConfig, seed: u64) -> Result<EffectModel> {
    EffectModel::random_supports(
        cfg.p,
        cfg.sparsity_beta,
        cfg.sparsity_alpha,
        cfg.target_corr,
        cfg.overlap.resolve(cfg.sparsity_beta, cfg.sparsity_alpha),
        cfg.distribution,
        derive_seed(seed, "model"),
    )
}

pub fn marginal_id(cfg: &ExperimentConfig) -> String {
    format!("{}:marginal", cfg.id)
}

pub fn panel_id(cfg: &ExperimentConfig, panel: &PanelSpec) -> String {
    format!("{}:{}", cfg.id, panel.label())
}

/// Simulated cohorts of one replicate.
pub struct Cohorts {
    pub x: GenotypeMatrix,
    pub z: GenotypeMatrix,
    pub y: crate::sim::TraitVector,
    pub y_z: crate::sim::TraitVector,
    pub model: EffectModel,
}

pub fn simulate_cohorts(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Result<Cohorts> {
    let model = effect_model(cfg, seed)?;
    let pair = sample_effect_pair(&model, derive_seed(seed, "pair"));
    let x = sample_genotypes_from_root(cfg.n, cfg.maf_low, cfg.maf_high, &prep.root_x, derive_seed(seed, "x"))?;
    let z = sample_genotypes_from_root(cfg.n_z, cfg.maf_low, cfg.maf_high, &prep.root_z, derive_seed(seed, "z"))?;
    let y = synthesize_traits(&x, &pair.beta, cfg.h2_beta, derive_seed(seed, "y"))?;
    let y_z = synthesize_traits(&z, &pair.alpha, cfg.h2_alpha, derive_seed(seed, "y_z"))?;
    Ok(Cohorts { x, z, y, y_z, model })
}

/// Reference panel genotypes. `ref-mixed` draws the first half of the
/// samples with the X structure and the second half with the Z structure.
pub fn reference_panel(cfg: &ExperimentConfig, prep: &Prepared, kind: PanelKind, seed: u64) -> Result<GenotypeMatrix> {
    let (lo, hi) = (cfg.maf_low, cfg.maf_high);
    match kind {
        PanelKind::RefX => sample_genotypes_from_root(cfg.n_w, lo, hi, &prep.root_x, derive_seed(seed, "w-x")),
        PanelKind::RefZ => sample_genotypes_from_root(cfg.n_w, lo, hi, &prep.root_z, derive_seed(seed, "w-z")),
        PanelKind::RefMixed => {
            let half = cfg.n_w / 2;
            let a = sample_genotypes_from_root(half, lo, hi, &prep.root_x, derive_seed(seed, "w-mixed-x"))?;
            let b = sample_genotypes_from_root(cfg.n_w - half, lo, hi, &prep.root_z, derive_seed(seed, "w-mixed-z"))?;
            GenotypeMatrix::stack(&a, &b)
        }
    }
}

fn failed_row(cfg: &ExperimentConfig, prep: &Prepared, id: String, idx: usize, lambda: Option<f64>, e: &Error) -> ReplicateRow {
    ReplicateRow {
        config_id: id,
        replicate: idx,
        g_naive: None,
        g_corrected: None,
        g_w: None,
        g_mw: None,
        h2_beta: cfg.h2_beta,
        h2_alpha: cfg.h2_alpha,
        omega: prep.omega,
        lambda,
        status: RowStatus::Failed,
        error: Some(e.to_string()),
    }
}

/// All rows of replicate `idx`: the marginal estimator first, then the
/// panels in configured order.
pub fn run_replicate(cfg: &ExperimentConfig, prep: &Prepared, idx: usize) -> Vec<ReplicateRow> {
    let seed = replicate_seed(cfg.base_seed, idx as u64);
    let cohorts = match simulate_cohorts(cfg, prep, seed) {
        Ok(c) => c,
        Err(e) => {
            let mut rows = Vec::new();
            if cfg.marginal {
                rows.push(failed_row(cfg, prep, marginal_id(cfg), idx, None, &e));
            }
            for pn in &cfg.panels {
                rows.push(failed_row(cfg, prep, panel_id(cfg, pn), idx, Some(pn.lambda), &e));
            }
            return rows;
        }
    };
    let est = marginal_summary_stats(&cohorts.x, &cohorts.y);
    let mut rows = Vec::new();
    if cfg.marginal {
        let row = est
            .as_ref()
            .map_err(clone_err)
            .and_then(|est| marginal_row(cfg, prep, &cohorts, est, idx));
        rows.push(row.unwrap_or_else(|e| failed_row(cfg, prep, marginal_id(cfg), idx, None, &e)));
    }
    for pn in &cfg.panels {
        let row = est
            .as_ref()
            .map_err(clone_err)
            .and_then(|est| panel_row(cfg, prep, &cohorts, est, pn, seed, idx));
        rows.push(row.unwrap_or_else(|e| failed_row(cfg, prep, panel_id(cfg, pn), idx, Some(pn.lambda), &e)));
    }
    rows
}

fn clone_err(e: &Error) -> Error {
    Error::Numerical(e.to_string())
}

fn marginal_row(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    c: &Cohorts,
    est: &crate::estimators::EffectEstimate,
    idx: usize,
) -> Result<ReplicateRow> {
    let moments = match cfg.moments {
        Provenance::PopulationExact => prep.moments.clone(),
        Provenance::SampleDebiased => {
            let xs = estimate_covariance(&c.x, Some(&prep.merged))?;
            let zs = estimate_covariance(&c.z, Some(&prep.merged))?;
            blockwise_moments(&xs, &zs, cfg.n, Provenance::SampleDebiased)?
        }
    };
    let y_hat = predict_traits(&c.z, est)?;
    let g = trait_correlation(&c.y_z, &y_hat, cfg.center)?;
    let gm = correct_marginal(g, cfg.h2_beta, cfg.h2_alpha, prep.omega, &moments)?;
    Ok(ReplicateRow {
        config_id: marginal_id(cfg),
        replicate: idx,
        g_naive: Some(g),
        g_corrected: Some(gm.value),
        g_w: None,
        g_mw: None,
        h2_beta: cfg.h2_beta,
        h2_alpha: cfg.h2_alpha,
        omega: prep.omega,
        lambda: None,
        status: gm.status.merge(moments.status).into(),
        error: None,
    })
}

fn panel_row(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    c: &Cohorts,
    est: &crate::estimators::EffectEstimate,
    pn: &PanelSpec,
    seed: u64,
    idx: usize,
) -> Result<ReplicateRow> {
    let w = reference_panel(cfg, prep, pn.kind, seed)?;
    let w_cov = estimate_covariance(&w, Some(&prep.merged))?;
    let adjusted = ridge_adjust(est, &w_cov, pn.lambda)?;
    let y_hat = predict_traits(&c.z, &adjusted)?;
    let g_w = trait_correlation(&c.y_z, &y_hat, cfg.center)?;
    let v = compute_v_params(&w_cov, &prep.x_cov, &prep.z_cov, pn.lambda)?;
    let g_mw = correct_reference(g_w, cfg.h2_beta, cfg.h2_alpha, prep.omega, &v)?;
    Ok(ReplicateRow {
        config_id: panel_id(cfg, pn),
        replicate: idx,
        g_naive: None,
        g_corrected: None,
        g_w: Some(g_w),
        g_mw: Some(g_mw.value),
        h2_beta: cfg.h2_beta,
        h2_alpha: cfg.h2_alpha,
        omega: prep.omega,
        lambda: Some(pn.lambda),
        status: g_mw.status.into(),
        error: None,
    })
}

/// Run every replicate on a pool of at most `workers` threads. Rows come
/// back sorted by replicate index regardless of scheduling.
pub fn simulate_replicates(cfg: &ExperimentConfig, prep: &Prepared, workers: usize) -> Result<Vec<ReplicateRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let per_rep: Vec<Vec<ReplicateRow>> =
        pool.install(|| (0..cfg.replicates).into_par_iter().map(|i| run_replicate(cfg, prep, i)).collect());
    Ok(per_rep.into_iter().flatten().collect())
}

/// Mean and sample SD (divisor `k − 1`) of the non-missing values.
pub fn column_stats(values: impl IntoIterator<Item = f64>) -> Option<ColumnStats> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0)).sqrt());
    Some(ColumnStats { mean, sd })
}

/// Group raw rows by `config_id` (first-appearance order) and aggregate.
/// Failed rows are counted but excluded from the statistics.
pub fn aggregate(rows: &[ReplicateRow]) -> Vec<SummaryRow> {
    let mut ids: Vec<&str> = Vec::new();
    for r in rows {
        if !ids.contains(&r.config_id.as_str()) {
            ids.push(&r.config_id);
        }
    }
    ids.into_iter()
        .map(|id| {
            let group: Vec<&ReplicateRow> = rows.iter().filter(|r| r.config_id == id).collect();
            let count = |s: RowStatus| group.iter().filter(|r| r.status == s).count();
            let usable: Vec<&&ReplicateRow> = group.iter().filter(|r| r.status != RowStatus::Failed).collect();
            let columns = std::array::from_fn(|j| column_stats(usable.iter().filter_map(|r| r.values()[j])));
            SummaryRow {
                config_id: id.to_string(),
                replicates: group.len(),
                n_ok: count(RowStatus::Ok),
                n_warned: count(RowStatus::Warned),
                n_failed: count(RowStatus::Failed),
                columns,
                theory_g: None,
                theory_var_corrected: None,
            }
        })
        .collect()
}

/// Theory columns for the marginal row: the limit of `G` under the
/// population moments and the corrected-variance limit evaluated at the
/// replicate-0 effect supports.
pub fn attach_theory(cfg: &ExperimentConfig, prep: &Prepared, rows: &mut [SummaryRow]) -> Result<()> {
    let id = marginal_id(cfg);
    let Some(row) = rows.iter_mut().find(|r| r.config_id == id) else {
        return Ok(());
    };
    row.theory_g = Some(theorem1_limit(cfg.target_corr, cfg.h2_beta, cfg.h2_alpha, prep.omega, &prep.moments)?);
    let inputs = VarianceInputs::from_model(&prep.x_cov, &prep.z_cov, &prep.model0, cfg.n, cfg.n_z, cfg.h2_beta, cfg.h2_alpha)?;
    row.theory_var_corrected = Some(variance_corrected(&inputs, &prep.moments, prep.omega)?);
    Ok(())
}

/// Simulate and aggregate without touching the filesystem.
pub fn simulate(cfg: &ExperimentConfig, workers: usize) -> Result<SummaryTable> {
    let prep = Prepared::new(cfg)?;
    let raw = simulate_replicates(cfg, &prep, workers)?;
    let mut rows = aggregate(&raw);
    attach_theory(cfg, &prep, &mut rows)?;
    Ok(SummaryTable { rows, raw, raw_path: None })
}

/// Simulate, then write `raw.csv`, `summary.csv` and `manifest.txt` to
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<SummaryTable> {
    let mut table = simulate(cfg, workers)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::data(dir, format!("cannot create output directory: {e}")))?;
    let raw_path = dir.join("raw.csv");
    write_file(&raw_path, |w| write_raw_csv(&table.raw, w))?;
    let summary_path = dir.join("summary.csv");
    write_file(&summary_path, |w| write_summary_csv(&table.rows, w))?;
    let mut manifest = Manifest::new(cfg.to_text(), cfg.base_seed);
    manifest.add_file(&raw_path)?;
    manifest.add_file(&summary_path)?;
    manifest.write(&dir.join("manifest.txt"))?;
    table.raw_path = Some(raw_path);
    Ok(table)
}

pub(crate) fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::data(path, format!("cannot create: {e}")))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::data(path, e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn opt_na(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

pub fn write_raw_csv(rows: &[ReplicateRow], w: &mut dyn Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RESULTS_HEADER.split(','))?;
    for r in rows {
        wtr.write_record([
            r.config_id.clone(),
            r.replicate.to_string(),
            opt(r.g_naive),
            opt(r.g_corrected),
            opt(r.g_w),
            opt(r.g_mw),
            r.h2_beta.to_string(),
            r.h2_alpha.to_string(),
            r.omega.to_string(),
            opt(r.lambda),
            r.status.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_raw_csv(r: impl Read) -> Result<Vec<ReplicateRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Numerical(format!("unexpected results header '{}'", header.join(","))));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| Error::Numerical(format!("bad number '{s}'")))
    };
    let req = |s: &str| -> Result<f64> { num(s)?.ok_or_else(|| Error::Numerical("missing value".into())) };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(ReplicateRow {
            config_id: rec[0].to_string(),
            replicate: rec[1].parse().map_err(|_| Error::Numerical(format!("bad replicate '{}'", &rec[1])))?,
            g_naive: num(&rec[2])?,
            g_corrected: num(&rec[3])?,
            g_w: num(&rec[4])?,
            g_mw: num(&rec[5])?,
            h2_beta: req(&rec[6])?,
            h2_alpha: req(&rec[7])?,
            omega: req(&rec[8])?,
            lambda: num(&rec[9])?,
            status: RowStatus::parse(&rec[10])?,
            error: None,
        });
    }
    Ok(out)
}

pub fn write_summary_csv(rows: &[SummaryRow], w: &mut dyn Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SUMMARY_HEADER.split(','))?;
    for r in rows {
        let mut rec = vec![
            r.config_id.clone(),
            r.replicates.to_string(),
            r.n_ok.to_string(),
            r.n_warned.to_string(),
            r.n_failed.to_string(),
        ];
        for c in &r.columns {
            rec.push(opt_na(c.map(|c| c.mean)));
            rec.push(opt_na(c.and_then(|c| c.sd)));
        }
        rec.push(opt_na(r.theory_g));
        rec.push(opt_na(r.theory_var_corrected));
        wtr.write_record(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        "id=tiny\ndims.n=300\ndims.n_z=200\ndims.n_w=100\ndims.p=40\nld.x.blocks=15,25\nld.x.rho=0.5\n\
         ld.z.blocks=20,20\nld.z.rho=0.2\neffects.sparsity_beta=0.5\neffects.sparsity_alpha=0.5\n\
         effects.target_corr=0.4\nestimators.panels=ref-x:0.5,ref-mixed:0.5\nreplicates=4\nbase_seed=9"
            .parse()
            .unwrap()
    }

    #[test]
    fn rows_are_ordered_and_complete() {
        let cfg = tiny();
        let t = simulate(&cfg, 2).unwrap();
        assert_eq!(t.raw.len(), 12);
        let ids: Vec<&str> = t.raw.iter().take(3).map(|r| r.config_id.as_str()).collect();
        assert_eq!(ids, ["tiny:marginal", "tiny:ref-x@0.5", "tiny:ref-mixed@0.5"]);
        assert!(t.raw.windows(2).all(|w| w[0].replicate <= w[1].replicate));
        assert!(t.raw.iter().all(|r| r.status != RowStatus::Failed));
        let m = t.row("tiny:marginal").unwrap();
        assert_eq!(m.replicates, 4);
        assert!(m.g_naive().unwrap().sd.unwrap() >= 0.0);
        assert!(m.theory_g.unwrap() > 0.0 && m.theory_var_corrected.unwrap() > 0.0);
        assert!(t.row("tiny:ref-x@0.5").unwrap().g_naive().is_none());
    }

    #[test]
    fn single_replicate_sd_is_na() {
        let mut cfg = tiny();
        cfg.replicates = 1;
        cfg.target_corr = 0.0;
        cfg.panels.clear();
        let t = simulate(&cfg, 1).unwrap();
        assert_eq!(t.raw.len(), 1);
        let c = t.rows[0].g_naive().unwrap();
        assert!(c.sd.is_none());
        let mut buf = Vec::new();
        write_summary_csv(&t.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(",NA,"));
    }

    #[test]
    fn infeasible_model_aborts() {
        let mut cfg = tiny();
        cfg.overlap = crate::harness::config::Overlap::Fraction(0.1);
        cfg.target_corr = 0.9;
        assert!(matches!(simulate(&cfg, 1), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn failed_rows_are_excluded_and_counted() {
        let mut rows = simulate(&tiny(), 1).unwrap().raw;
        rows.retain(|r| r.config_id == "tiny:marginal");
        rows[0].status = RowStatus::Failed;
        rows[0].g_naive = None;
        rows[0].g_corrected = None;
        let s = aggregate(&rows);
        assert_eq!((s[0].n_failed, s[0].n_ok + s[0].n_warned), (1, 3));
        let expect = column_stats(rows[1..].iter().map(|r| r.g_naive.unwrap())).unwrap();
        assert_eq!(s[0].g_naive().unwrap(), expect);
    }

    #[test]
    fn raw_csv_roundtrip() {
        let t = simulate(&tiny(), 1).unwrap();
        let mut buf = Vec::new();
        write_raw_csv(&t.raw, &mut buf).unwrap();
        let back = read_raw_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), t.raw.len());
        for (a, b) in back.iter().zip(&t.raw) {
            assert_eq!(a.values(), b.values());
            assert_eq!(a.config_id, b.config_id);
        }
    }
}
