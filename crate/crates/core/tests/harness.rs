use std::path::Path;

use transgc_core::harness::files::{
    estimate_from_files, export_genotypes, write_estimates, write_summary_stats, write_traits, EstimateFlags,
    InputFiles, ESTIMATE_HEADER,
};
use transgc_core::harness::runner::{simulate_cohorts, Prepared};
use transgc_core::{
    estimators::estimate_from_summary, marginal_summary_stats, run_experiment, simulate, Error, ExperimentConfig,
    Manifest, MomentEstimates,
};

fn tiny() -> ExperimentConfig {
    "id=tiny\ndims.n=400\ndims.n_z=150\ndims.n_w=120\ndims.p=50\nld.x.blocks=20,30\nld.x.rho=0.5\n\
     ld.z.blocks=25,25\nld.z.rho=0.2\neffects.target_corr=0.5\nestimators.panels=ref-x:1,ref-z:1\n\
     replicates=6\nbase_seed=21"
        .parse()
        .unwrap()
}

fn write(path: &Path, f: impl FnOnce(&mut dyn std::io::Write) -> transgc_core::Result<()>) {
    let mut buf = Vec::new();
    f(&mut buf).unwrap();
    std::fs::write(path, buf).unwrap();
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let cfg = tiny();
    let one = simulate(&cfg, 1).unwrap();
    let four = simulate(&cfg, 4).unwrap();
    assert_eq!(one.raw, four.raw);
    assert_eq!(one.rows, four.rows);
}

#[test]
fn file_pipeline_matches_in_memory() {
    let cfg = tiny();
    let prep = Prepared::new(&cfg).unwrap();
    let c = simulate_cohorts(&cfg, &prep, 77).unwrap();
    let est = marginal_summary_stats(&c.x, &c.y).unwrap();
    let direct = estimate_from_summary(&est, &c.z, &c.y_z, cfg.h2_beta, cfg.h2_alpha, &prep.moments, true).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let files = InputFiles {
        summary_stats: d.join("ss.csv"),
        genotypes: d.join("z.csv"),
        traits: d.join("y.csv"),
        moments: d.join("m.csv"),
    };
    write(&files.summary_stats, |w| write_summary_stats(&est, c.z.variant_ids(), w));
    export_genotypes(&c.z, &files.genotypes).unwrap();
    write(&files.traits, |w| write_traits(&c.y_z, None, w));
    write(&files.moments, |w| MomentEstimates::write_csv(&[prep.moments.clone()], w));

    let back = estimate_from_files(&files, cfg.h2_beta, cfg.h2_alpha, EstimateFlags { center: true }).unwrap();
    assert!((back.g_naive - direct.g_naive).abs() <= 1e-12);
    assert!((back.g_corrected - direct.g_corrected).abs() <= 1e-12);
    assert_eq!(back.omega, direct.omega);

    // shuffled variant order is refused rather than silently misaligned
    let mut ids = c.z.variant_ids().to_vec();
    ids.swap(3, 17);
    write(&files.summary_stats, |w| write_summary_stats(&est, &ids, w));
    let err = estimate_from_files(&files, cfg.h2_beta, cfg.h2_alpha, EstimateFlags { center: true }).unwrap_err();
    assert!(matches!(err, Error::Data { .. }), "{err}");
    assert!(err.to_string().contains("position 4"));
}

#[test]
fn thirty_trait_table() {
    let cfg = tiny();
    let prep = Prepared::new(&cfg).unwrap();
    let rows: Vec<_> = (0..30u64)
        .map(|k| {
            let c = simulate_cohorts(&cfg, &prep, 1000 + k).unwrap();
            let est = marginal_summary_stats(&c.x, &c.y).unwrap();
            let r = estimate_from_summary(&est, &c.z, &c.y_z, cfg.h2_beta, cfg.h2_alpha, &prep.moments, true).unwrap();
            (format!("trait{k}"), r)
        })
        .collect();
    let mut buf = Vec::new();
    write_estimates(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 31);
    assert_eq!(lines[0], ESTIMATE_HEADER);
    for (line, (label, r)) in lines[1..].iter().zip(&rows) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), ESTIMATE_HEADER.split(',').count());
        assert_eq!(f[0], label);
        assert_eq!(f[1].parse::<f64>().unwrap(), r.g_naive);
        assert_eq!(f[7], cfg.n.to_string());
    }
}

#[test]
fn manifest_covers_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.replicates = 2;
    cfg.output_dir = dir.path().join("run");
    run_experiment(&cfg, 1).unwrap();
    let m = Manifest::read(&cfg.output_dir.join("manifest.txt")).unwrap();
    let mut listed: Vec<&str> = m.files().map(|(n, _)| n).collect();
    listed.sort_unstable();
    let mut on_disk: Vec<String> = std::fs::read_dir(&cfg.output_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt")
        .collect();
    on_disk.sort_unstable();
    assert_eq!(listed, on_disk);
    m.verify(&cfg.output_dir).unwrap();

    std::fs::write(cfg.output_dir.join("raw.csv"), "tampered").unwrap();
    assert!(m.verify(&cfg.output_dir).is_err());
}
