//! CSV exchange formats and the file-driven estimation pipeline.
//!
//! * genotypes: header of variant IDs, one sample per row; MAF sidecar
//!   `<stem>.maf.csv` with `variant_id,maf`
//! * traits: `sample_id,value`
//! * summary statistics: a `# n=<GWAS sample size>` line, then `variant_id,beta`
//! * moments: the [`MOMENTS_HEADER`](crate::moments::MOMENTS_HEADER) layout

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{estimate_from_summary, EffectEstimate, EstimationResult};
use crate::harness::runner::write_file;
use crate::moments::MomentEstimates;
use crate::sim::{GenotypeMatrix, TraitVector};

pub const ESTIMATE_HEADER: &str = "label,g_naive,g_corrected,h2_beta,h2_alpha,omega,p,n,status";

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::data(path, format!("cannot open: {e}")))
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<std::fs::File>>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?))
}

fn number(path: &Path, what: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::data(path, format!("{what}: cannot parse '{s}' as a number")))
}

/// `z.csv` → `z.maf.csv`.
pub fn maf_sidecar_path(genotype_path: &Path) -> PathBuf {
    let stem = genotype_path.file_stem().unwrap_or_default().to_string_lossy();
    genotype_path.with_file_name(format!("{stem}.maf.csv"))
}

pub fn write_genotypes(geno: &GenotypeMatrix, w: &mut dyn Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(geno.variant_ids())?;
    for row in geno.values().row_iter() {
        wtr.write_record(row.iter().map(f64::to_string))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_maf(geno: &GenotypeMatrix, w: &mut dyn Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["variant_id", "maf"])?;
    for (id, f) in geno.variant_ids().iter().zip(geno.maf()) {
        wtr.write_record([id.clone(), f.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write the genotype CSV and its MAF sidecar.
pub fn export_genotypes(geno: &GenotypeMatrix, path: &Path) -> Result<()> {
    write_file(path, |w| write_genotypes(geno, w))?;
    write_file(&maf_sidecar_path(path), |w| write_maf(geno, w))
}

fn read_maf(path: &Path, ids: &[String]) -> Result<Vec<f64>> {
    let mut rdr = reader(path)?;
    let mut maf = Vec::with_capacity(ids.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::data(path, format!("row {}: expected variant_id,maf", i + 1)));
        }
        if ids.get(i).map(String::as_str) != Some(&rec[0]) {
            return Err(Error::data(
                path,
                format!("variant-ID mismatch at position {}: '{}' vs genotype header", i + 1, &rec[0]),
            ));
        }
        maf.push(number(path, "maf", &rec[1])?);
    }
    if maf.len() != ids.len() {
        return Err(Error::data(path, format!("{} MAF rows for {} variants", maf.len(), ids.len())));
    }
    Ok(maf)
}

/// Read genotypes. Already-standardized values are kept bit-for-bit;
/// anything else is standardized. MAF comes from the sidecar when present,
/// otherwise from raw {0,1,2} counts.
pub fn read_genotypes(path: &Path) -> Result<GenotypeMatrix> {
    let mut rdr = reader(path)?;
    let ids: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::data(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = ids.len();
    if p == 0 {
        return Err(Error::data(path, "empty genotype header"));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
        for s in rec.iter() {
            data.push(number(path, "genotype", s)?);
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::data(path, format!("need at least 2 samples, found {n}")));
    }
    let values = DMatrix::from_row_slice(n, p, &data);
    let sidecar = maf_sidecar_path(path);
    let maf = if sidecar.exists() {
        read_maf(&sidecar, &ids)?
    } else if values.iter().all(|v| *v == 0.0 || *v == 1.0 || *v == 2.0) {
        values
            .column_iter()
            .map(|c| {
                let f = c.sum() / (2.0 * n as f64);
                f.min(1.0 - f)
            })
            .collect()
    } else {
        return Err(Error::data(
            path,
            format!("values are not allele counts and no MAF sidecar {} exists", sidecar.display()),
        ));
    };
    if let Some(j) = maf.iter().position(|f| *f <= 0.0) {
        return Err(Error::data(path, format!("variant '{}' is monomorphic", ids[j])));
    }
    match GenotypeMatrix::with_ids(values.clone(), maf.clone(), ids.clone(), true) {
        Ok(g) => Ok(g),
        Err(Error::State(_)) => GenotypeMatrix::with_ids(values, maf, ids, false)?
            .standardize()
            .map_err(|e| Error::data(path, e.to_string())),
        Err(e) => Err(Error::data(path, e.to_string())),
    }
}

pub fn write_traits(t: &TraitVector, sample_ids: Option<&[String]>, w: &mut dyn Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sample_id", "value"])?;
    for (i, v) in t.values.iter().enumerate() {
        let id = sample_ids.map_or_else(|| format!("s{}", i + 1), |ids| ids[i].clone());
        wtr.write_record([id, v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_traits(path: &Path) -> Result<(Vec<String>, TraitVector)> {
    let mut rdr = reader(path)?;
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::data(path, "expected sample_id,value rows"));
        }
        ids.push(rec[0].to_string());
        vals.push(number(path, "trait", &rec[1])?);
    }
    Ok((ids, TraitVector::observed(DVector::from_vec(vals))))
}

pub fn write_summary_stats(est: &EffectEstimate, variant_ids: &[String], w: &mut dyn Write) -> Result<()> {
    if variant_ids.len() != est.values.len() {
        return Err(Error::Shape(format!(
            "{} variant IDs for {} estimates",
            variant_ids.len(),
            est.values.len()
        )));
    }
    writeln!(w, "# n={}", est.n_source)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["variant_id", "beta"])?;
    for (id, b) in variant_ids.iter().zip(est.values.iter()) {
        wtr.write_record([id.clone(), b.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Summary statistics and their variant IDs. The `# n=` line is required:
/// `ω = p/n` cannot be recovered without it.
pub fn read_summary_stats(path: &Path) -> Result<(Vec<String>, EffectEstimate)> {
    let mut r = open(path)?;
    let mut first = String::new();
    r.read_line(&mut first).map_err(|e| Error::data(path, e.to_string()))?;
    let n: usize = first
        .trim()
        .strip_prefix('#')
        .and_then(|s| s.trim().strip_prefix("n="))
        .ok_or_else(|| {
            Error::data(
                path,
                "first line must record the GWAS sample size as '# n=<int>'; omega = p/n cannot be derived without it",
            )
        })?
        .trim()
        .parse()
        .map_err(|_| Error::data(path, format!("cannot parse sample size from '{}'", first.trim())))?;
    if n == 0 {
        return Err(Error::data(path, "sample size n must be positive"));
    }
    let mut rdr = csv::Reader::from_reader(r);
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::data(path, "expected variant_id,beta rows"));
        }
        ids.push(rec[0].to_string());
        vals.push(number(path, "beta", &rec[1])?);
    }
    let est = EffectEstimate::marginal(DVector::from_vec(vals), n).map_err(|e| Error::data(path, e.to_string()))?;
    Ok((ids, est))
}

pub fn read_moments(path: &Path) -> Result<MomentEstimates> {
    MomentEstimates::read_csv(open(path)?)
        .map_err(|e| Error::data(path, e.to_string()))?
        .into_iter()
        .next()
        .ok_or_else(|| Error::data(path, "no moment rows"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputFiles {
    pub summary_stats: PathBuf,
    pub genotypes: PathBuf,
    pub traits: PathBuf,
    pub moments: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimateFlags {
    /// Center both trait vectors before the correlation.
    pub center: bool,
}

/// Predict, correlate and correct on user data.
pub fn estimate_from_files(
    files: &InputFiles,
    h2_beta: f64,
    h2_alpha: f64,
    flags: EstimateFlags,
) -> Result<EstimationResult> {
    let (ss_ids, est) = read_summary_stats(&files.summary_stats)?;
    let z = read_genotypes(&files.genotypes)?;
    if ss_ids != z.variant_ids() {
        let pos = ss_ids.iter().zip(z.variant_ids()).position(|(a, b)| a != b);
        let detail = match pos {
            Some(i) => format!("position {}: '{}' vs '{}'", i + 1, ss_ids[i], z.variant_ids()[i]),
            None => format!("{} vs {} variants", ss_ids.len(), z.p()),
        };
        return Err(Error::data(&files.genotypes, format!("variant-ID mismatch with summary statistics, {detail}")));
    }
    let (_, y_z) = read_traits(&files.traits)?;
    if y_z.len() != z.n() {
        return Err(Error::data(&files.traits, format!("{} trait values for {} genotyped samples", y_z.len(), z.n())));
    }
    let moments = read_moments(&files.moments)?;
    if moments.p != z.p() {
        return Err(Error::data(&files.moments, format!("moments computed for p={}, data has p={}", moments.p, z.p())));
    }
    estimate_from_summary(&est, &z, &y_z, h2_beta, h2_alpha, &moments, flags.center)
}

pub fn write_estimates(rows: &[(String, EstimationResult)], w: &mut dyn Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ESTIMATE_HEADER.split(','))?;
    for (label, r) in rows {
        let n = (r.moments.p as f64 / r.omega).round();
        wtr.write_record([
            label.clone(),
            r.g_naive.to_string(),
            r.g_corrected.to_string(),
            r.h2_beta.to_string(),
            r.h2_alpha.to_string(),
            r.omega.to_string(),
            r.moments.p.to_string(),
            n.to_string(),
            r.status.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
