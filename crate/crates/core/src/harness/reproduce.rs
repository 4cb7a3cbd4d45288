//! Desk- and paper-scale reproductions of the published table and figures.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, LdSpec, PanelKind, PanelSpec, DESK_BLOCK_SIZES};
use crate::harness::manifest::Manifest;
use crate::harness::runner::{
    marginal_id, simulate, write_file, write_raw_csv, write_summary_csv, ReplicateRow, SummaryRow,
};
use crate::moments::MomentEstimates;
use crate::shrinkage::{emit_shrinkage_curve, linear_grid, log_grid, theorem1_limit, write_curve_csv};

const UKB_FIXTURE: &str = include_str!("../../fixtures/ukb_moments.csv");

/// Cross-population (European to Asian) LD moments. Only `b2_x` and `b1_xz`
/// are published; `b3_x`, `b1_x2z` and `b1_sqrtxz` are filled in so that
/// the `t = 0` and `t = 1` curves cross near `ω = 1` at `h² = 0.4`.
pub fn ukb_fixture() -> MomentEstimates {
    MomentEstimates::read_csv(UKB_FIXTURE.as_bytes())
        .expect("bundled fixture parses")
        .remove(0)
}

/// Sustained throughput assumed by the cost estimate.
pub const ASSUMED_GFLOPS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Table1,
    Fig1,
    Fig2,
    Fig3,
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Target::Table1),
            "fig1" => Ok(Target::Fig1),
            "fig2" => Ok(Target::Fig2),
            "fig3" => Ok(Target::Fig3),
            _ => Err(Error::Config(format!("unknown target '{s}' (expected table1, fig1, fig2 or fig3)"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Table1 => "table1",
            Target::Fig1 => "fig1",
            Target::Fig2 => "fig2",
            Target::Fig3 => "fig3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(format!("unknown scale '{s}' (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOptions {
    pub scale: Scale,
    pub allow_paper_scale: bool,
    pub workers: usize,
    pub base_seed: u64,
    /// Overrides the target's replicate count.
    pub replicates: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            scale: Scale::Desk,
            allow_paper_scale: false,
            workers: 1,
            base_seed: 1,
            replicates: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const TABLE1_SPARSITY: [f64; 3] = [0.1, 0.01, 0.001];
/// `(h², φ)` column groups.
pub const TABLE1_SETTINGS: [(f64, f64); 2] = [(0.3, 0.25), (0.6, 0.5)];
pub const FIG2_OMEGAS: [f64; 6] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0];
pub const FIG2_LAMBDA: f64 = 3.0;
pub const FIG2_N_W: usize = 2_000;
pub const FIG3_H2: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

fn blocks(sizes: &[usize], rho: f64) -> LdSpec {
    LdSpec::Ar {
        sizes: sizes.to_vec(),
        rhos: vec![rho],
    }
}

/// Simulation configs behind `table1`: two GWAS sizes, three sparsities
/// and two `(h², φ)` settings.
pub fn table1_configs(scale: Scale, base_seed: u64) -> Vec<ExperimentConfig> {
    let (ns, n_z, reps, p, ld) = match scale {
        Scale::Desk => ([20_000, 2_857], 500, 200, 2_000, None),
        Scale::Paper => ([350_000, 50_000], 1_000, 500, 14_000, Some(vec![2_000; 7])),
    };
    let mut out = Vec::new();
    for (h2, phi) in TABLE1_SETTINGS {
        for n in ns {
            for s in TABLE1_SPARSITY {
                let mut c = ExperimentConfig {
                    id: format!("table1:h2={h2}:n={n}:s={s}"),
                    n,
                    n_z,
                    p,
                    sparsity_beta: s,
                    sparsity_alpha: s,
                    target_corr: phi,
                    h2_beta: h2,
                    h2_alpha: h2,
                    replicates: reps,
                    base_seed,
                    ..ExperimentConfig::default()
                };
                if let Some(sizes) = &ld {
                    c.ld_x = LdSpec::Ar {
                        sizes: sizes.clone(),
                        rhos: crate::harness::config::DESK_RHO_X.to_vec(),
                    };
                    c.ld_z = LdSpec::Ar {
                        sizes: sizes.clone(),
                        rhos: crate::harness::config::DESK_RHO_Z.to_vec(),
                    };
                }
                out.push(c);
            }
        }
    }
    out
}

/// Case-I synthetic LD: strong LD in the GWAS population, weak in the target.
pub fn fig2_config(omega: f64, scale: Scale, base_seed: u64) -> ExperimentConfig {
    let (p, sizes, reps) = match scale {
        Scale::Desk => (2_000, DESK_BLOCK_SIZES.to_vec(), 200),
        Scale::Paper => (2_000, vec![2_000], 200),
    };
    let n = (p as f64 / omega).round() as usize;
    ExperimentConfig {
        id: format!("fig2:omega={omega}"),
        n,
        n_z: 500,
        n_w: FIG2_N_W,
        p,
        ld_x: blocks(&sizes, 0.8),
        ld_z: blocks(&sizes, 0.2),
        sparsity_beta: 0.1,
        sparsity_alpha: 0.1,
        target_corr: 0.3,
        h2_beta: 0.4,
        h2_alpha: 0.4,
        panels: [PanelKind::RefX, PanelKind::RefZ, PanelKind::RefMixed]
            .into_iter()
            .map(|kind| PanelSpec { kind, lambda: FIG2_LAMBDA })
            .collect(),
        replicates: reps,
        base_seed,
        ..ExperimentConfig::default()
    }
}

pub fn fig2_configs(scale: Scale, base_seed: u64) -> Vec<ExperimentConfig> {
    let omegas: &[f64] = match scale {
        Scale::Desk => &FIG2_OMEGAS,
        Scale::Paper => &[0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
    };
    omegas.iter().map(|&w| fig2_config(w, scale, base_seed)).collect()
}

/// Rough floating-point work of a simulation config: the blockwise LD
/// transforms dominate.
pub fn estimated_flops(cfg: &ExperimentConfig) -> f64 {
    let sizes: Vec<usize> = match &cfg.ld_x {
        LdSpec::Ar { sizes, .. } => sizes.clone(),
        LdSpec::File(_) => vec![cfg.p],
    };
    let sq: f64 = sizes.iter().map(|&s| (s * s) as f64).sum();
    let rows = (cfg.n + cfg.n_z + cfg.panels.len() * cfg.n_w) as f64;
    let panel_solves: f64 = cfg.panels.len() as f64 * sizes.iter().map(|&s| 6.0 * (s as f64).powi(3)).sum::<f64>();
    cfg.replicates as f64 * (4.0 * rows * sq + panel_solves)
}

/// Peak bytes held by one replicate's largest genotype matrix.
pub fn estimated_bytes(cfg: &ExperimentConfig) -> f64 {
    (cfg.n.max(cfg.n_w) * cfg.p * 8) as f64
}

fn configs_for(target: Target, scale: Scale, seed: u64) -> Vec<ExperimentConfig> {
    match target {
        Target::Table1 => table1_configs(scale, seed),
        Target::Fig2 => fig2_configs(scale, seed),
        Target::Fig1 | Target::Fig3 => Vec::new(),
    }
}

/// The refusal text for a paper-scale run without the override.
pub fn cost_estimate(target: Target) -> String {
    let cfgs = configs_for(target, Scale::Paper, 1);
    let flops: f64 = cfgs.iter().map(estimated_flops).sum();
    let bytes = cfgs.iter().map(estimated_bytes).fold(0.0, f64::max);
    format!(
        "paper-scale {target} needs about {:.3e} GFLOP (~{:.1} CPU-hours at {ASSUMED_GFLOPS} GFLOP/s) \
         and ~{:.1} GB per worker; pass the resource override to run it",
        flops / 1e9,
        flops / 1e9 / ASSUMED_GFLOPS / 3600.0,
        bytes / 1e9
    )
}

/// Run `target` and write its CSVs and `manifest.txt` under
/// `opts.out_dir`. Returns every file written.
pub fn reproduce(target: Target, opts: &ReproduceOptions) -> Result<Vec<PathBuf>> {
    if opts.scale == Scale::Paper && !opts.allow_paper_scale {
        return Err(Error::Refused(cost_estimate(target)));
    }
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::data(dir, format!("cannot create output directory: {e}")))?;
    let mut cfgs = configs_for(target, opts.scale, opts.base_seed);
    if let Some(r) = opts.replicates {
        for c in &mut cfgs {
            c.replicates = r;
        }
    }
    let mut config_text = format!("target={target}\nscale={:?}\n", opts.scale);
    for c in &cfgs {
        config_text.push_str(&c.to_text());
    }
    let mut manifest = Manifest::new(config_text, opts.base_seed);
    let files = match target {
        Target::Fig1 => {
            manifest.set(
                "deviation",
                "moment fixture: b3_x, b1_x2z and b1_sqrtxz are chosen values; only b2_x=4.41 and b1_xz=2.86 are published",
            );
            fig1(dir)?
        }
        Target::Fig3 => {
            manifest.set("deviation", "moment fixture as for fig1; curves are asymptotic limits");
            fig3(dir)?
        }
        Target::Table1 => {
            manifest.set("deviation", "synthetic AR block LD substitutes UK Biobank genotypes");
            let (raw, rows) = run_all(&cfgs, opts.workers)?;
            let mut files = write_runs(dir, &raw, &rows)?;
            let path = dir.join("table1.csv");
            write_file(&path, |w| write_table1(&cfgs, &rows, w))?;
            files.push(path);
            files
        }
        Target::Fig2 => {
            manifest.set(
                "deviation",
                "synthetic Case-I AR LD (rho_x=0.8, rho_z=0.2) substitutes the 1000 Genomes chr1 40-50Mb region",
            );
            let (raw, rows) = run_all(&cfgs, opts.workers)?;
            let mut files = write_runs(dir, &raw, &rows)?;
            let path = dir.join("fig2.csv");
            write_file(&path, |w| write_fig2(&cfgs, &rows, w))?;
            files.push(path);
            files
        }
    };
    for f in &files {
        manifest.add_file(f)?;
    }
    let mpath = dir.join("manifest.txt");
    manifest.write(&mpath)?;
    let mut all = files;
    all.push(mpath);
    Ok(all)
}

fn run_all(cfgs: &[ExperimentConfig], workers: usize) -> Result<(Vec<ReplicateRow>, Vec<SummaryRow>)> {
    let mut raw = Vec::new();
    let mut rows = Vec::new();
    for c in cfgs {
        let t = simulate(c, workers)?;
        raw.extend(t.raw);
        rows.extend(t.rows);
    }
    Ok((raw, rows))
}

fn write_runs(dir: &Path, raw: &[ReplicateRow], rows: &[SummaryRow]) -> Result<Vec<PathBuf>> {
    let raw_path = dir.join("raw.csv");
    write_file(&raw_path, |w| write_raw_csv(raw, w))?;
    let summary_path = dir.join("summary.csv");
    write_file(&summary_path, |w| write_summary_csv(rows, w))?;
    Ok(vec![raw_path, summary_path])
}

fn cell(mean: f64, sd: Option<f64>) -> String {
    match sd {
        Some(sd) => format!("{mean:.3} ({sd:.3})"),
        None => format!("{mean:.3} (NA)"),
    }
}

pub const TABLE1_HEADER: &str = "estimator,n,h2,phi,sparsity_0.1,sparsity_0.01,sparsity_0.001,mean";

/// Table layout: one line per estimator and GWAS size, sparsities across,
/// then the average of the means and of the SDs.
fn write_table1(cfgs: &[ExperimentConfig], rows: &[SummaryRow], w: &mut dyn std::io::Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TABLE1_HEADER.split(','))?;
    let mut ns: Vec<usize> = cfgs.iter().map(|c| c.n).collect();
    ns.dedup();
    ns.sort_unstable_by(|a, b| b.cmp(a));
    ns.dedup();
    for (h2, phi) in TABLE1_SETTINGS {
        for (col, name) in [(0usize, "G"), (1, "G^M")] {
            for &n in &ns {
                let mut rec = vec![name.to_string(), n.to_string(), h2.to_string(), phi.to_string()];
                let (mut means, mut sds) = (Vec::new(), Vec::new());
                for s in TABLE1_SPARSITY {
                    let stats = cfgs
                        .iter()
                        .find(|c| c.n == n && c.h2_beta == h2 && c.sparsity_beta == s)
                        .and_then(|c| rows.iter().find(|r| r.config_id == marginal_id(c)))
                        .and_then(|r| r.columns[col]);
                    match stats {
                        Some(st) => {
                            means.push(st.mean);
                            sds.extend(st.sd);
                            rec.push(cell(st.mean, st.sd));
                        }
                        None => rec.push("NA".into()),
                    }
                }
                let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                rec.push(if means.is_empty() {
                    "NA".into()
                } else {
                    cell(avg(&means), (sds.len() == means.len()).then(|| avg(&sds)))
                });
                wtr.write_record(rec)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub const FIG2_HEADER: &str = "omega,estimator,mean,sd,corrected_mean,corrected_sd";

fn write_fig2(cfgs: &[ExperimentConfig], rows: &[SummaryRow], w: &mut dyn std::io::Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(FIG2_HEADER.split(','))?;
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for c in cfgs {
        let omega = c.p as f64 / c.n as f64;
        let mut entries = vec![("marginal".to_string(), marginal_id(c), 0usize)];
        for pn in &c.panels {
            entries.push((pn.kind.as_str().to_string(), format!("{}:{}", c.id, pn.label()), 2));
        }
        for (name, id, col) in entries {
            let Some(r) = rows.iter().find(|r| r.config_id == id) else { continue };
            let (naive, corrected) = (r.columns[col], r.columns[col + 1]);
            wtr.write_record([
                omega.to_string(),
                name,
                na(naive.map(|s| s.mean)),
                na(naive.and_then(|s| s.sd)),
                na(corrected.map(|s| s.mean)),
                na(corrected.and_then(|s| s.sd)),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub const FIG1_H2: [f64; 2] = [0.4, 0.8];
pub const FIG1_PHI: f64 = 1.0;

/// The `ω` grid of the shrinkage-path figures, with `ω = 1` included.
pub fn fig1_omega_grid() -> Vec<f64> {
    let mut g = log_grid(1e-3, 100.0, 61);
    g.push(1.0);
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    g
}

fn fig1(dir: &Path) -> Result<Vec<PathBuf>> {
    let m = ukb_fixture();
    let mut files = Vec::new();
    for h2 in FIG1_H2 {
        let rows = emit_shrinkage_curve(&fig1_omega_grid(), &linear_grid(0.0, 1.0, 5), h2, h2, FIG1_PHI, &m)?;
        let path = dir.join(format!("fig1_h2_{h2}.csv"));
        write_file(&path, |w| write_curve_csv(&rows, w))?;
        files.push(path);
    }
    Ok(files)
}

pub const FIG3_HEADER: &str = "omega,h2,analysis,limit_G";
pub const FIG3_PHI: f64 = 0.3;

fn fig3(dir: &Path) -> Result<Vec<PathBuf>> {
    let cross = ukb_fixture();
    let within = cross.within_population();
    let path = dir.join("fig3.csv");
    write_file(&path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(FIG3_HEADER.split(','))?;
        for h2 in FIG3_H2 {
            for omega in fig1_omega_grid() {
                for (name, m) in [("cross", &cross), ("within", &within)] {
                    let g = theorem1_limit(FIG3_PHI, h2, h2, omega, m)?;
                    wtr.write_record([omega.to_string(), h2.to_string(), name.to_string(), g.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    })?;
    Ok(vec![path])
}
