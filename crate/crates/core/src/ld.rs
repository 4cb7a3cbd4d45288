//! LD covariance matrices stored block-diagonally, with construction from
//! auto-regressive blocks, sample estimation, PSD square roots and
//! trans-population block merging.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sim::GenotypeMatrix;

/// Largest block that is ever held as a dense matrix.
pub const DENSE_BLOCK_LIMIT: usize = 5000;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_CLIP_TOL: f64 = 1e-10;

/// Ordered, contiguous, disjoint 1-based inclusive index ranges covering `1..=p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    ranges: Vec<(usize, usize)>,
    label: String,
}

impl BlockPartition {
    pub fn new(ranges: Vec<(usize, usize)>, label: impl Into<String>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::Domain("partition has no ranges".into()));
        }
        let mut expected = 1;
        for &(start, end) in &ranges {
            if start != expected {
                return Err(Error::Domain(format!(
                    "range ({start}, {end}) does not start at {expected}; ranges must be sorted and contiguous"
                )));
            }
            if end < start {
                return Err(Error::Domain(format!("range ({start}, {end}) is empty")));
            }
            expected = end + 1;
        }
        Ok(Self {
            ranges,
            label: label.into(),
        })
    }

    pub fn single(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Domain("p must be positive".into()));
        }
        Self::new(vec![(1, p)], "single")
    }

    pub fn from_sizes(sizes: &[usize], label: impl Into<String>) -> Result<Self> {
        let mut ranges = Vec::with_capacity(sizes.len());
        let mut start = 1;
        for &s in sizes {
            if s == 0 {
                return Err(Error::Domain("block sizes must be positive".into()));
            }
            ranges.push((start, start + s - 1));
            start += s;
        }
        Self::new(ranges, label)
    }

    /// Number of variants covered.
    pub fn p(&self) -> usize {
        self.ranges.last().map(|r| r.1).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|&(s, e)| e - s + 1).collect()
    }

    /// Zero-based half-open column ranges, one per block.
    pub fn offsets(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.ranges.iter().map(|&(s, e)| (s - 1)..e)
    }

    /// Index of the block holding zero-based variant `i`.
    pub fn block_of(&self, i: usize) -> Option<usize> {
        let one_based = i + 1;
        let idx = self.ranges.partition_point(|&(_, e)| e < one_based);
        (idx < self.ranges.len()).then_some(idx)
    }

    /// True when every range of `self` lies inside a single range of `coarser`.
    pub fn refines(&self, coarser: &BlockPartition) -> bool {
        if self.p() != coarser.p() {
            return false;
        }
        let ends: std::collections::HashSet<usize> = self.ranges.iter().map(|r| r.1).collect();
        coarser.ranges.iter().all(|r| ends.contains(&r.1))
    }

    /// Parse the block-spec text format: one `start<TAB>end` line per block,
    /// `#` comment lines and blank lines ignored.
    pub fn read_spec<R: BufRead>(reader: R, label: impl Into<String>) -> Result<Self> {
        let mut ranges = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split('\t');
            let parse = |f: Option<&str>| -> Result<usize> {
                f.and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                    Error::Domain(format!(
                        "block spec line {}: expected `start<TAB>end`, got {:?}",
                        lineno + 1,
                        line
                    ))
                })
            };
            let start = parse(fields.next())?;
            let end = parse(fields.next())?;
            if fields.next().is_some() {
                return Err(Error::Domain(format!(
                    "block spec line {}: too many fields",
                    lineno + 1
                )));
            }
            ranges.push((start, end));
        }
        Self::new(ranges, label)
    }

    pub fn write_spec<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", self.label)?;
        for &(s, e) in &self.ranges {
            writeln!(w, "{s}\t{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovSource {
    SyntheticAr,
    SyntheticBlock,
    SampleEstimate,
}

/// Symmetric block-diagonal covariance. Entries across distinct blocks are
/// exactly zero and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    partition: BlockPartition,
    blocks: Vec<DMatrix<f64>>,
    source: CovSource,
    singular: bool,
}

impl CovarianceMatrix {
    /// Assemble from per-block dense matrices, checking shape and symmetry.
    pub fn from_blocks(
        partition: BlockPartition,
        blocks: Vec<DMatrix<f64>>,
        source: CovSource,
    ) -> Result<Self> {
        if blocks.len() != partition.len() {
            return Err(Error::Shape(format!(
                "{} blocks supplied for a partition of {} ranges",
                blocks.len(),
                partition.len()
            )));
        }
        for (k, (b, size)) in blocks.iter().zip(partition.sizes()).enumerate() {
            if b.nrows() != size || b.ncols() != size {
                return Err(Error::Shape(format!(
                    "block {k} is {}x{}, partition expects {size}x{size}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if size > DENSE_BLOCK_LIMIT {
                return Err(Error::Domain(format!(
                    "block {k} has {size} variants; dense blocks are limited to {DENSE_BLOCK_LIMIT}"
                )));
            }
            check_symmetric(b, k)?;
        }
        Ok(Self {
            partition,
            blocks,
            source,
            singular: false,
        })
    }

    pub fn identity(partition: BlockPartition) -> Self {
        let blocks = partition
            .sizes()
            .into_iter()
            .map(|s| DMatrix::identity(s, s))
            .collect();
        Self {
            partition,
            blocks,
            source: CovSource::SyntheticBlock,
            singular: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.partition.p()
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn source(&self) -> CovSource {
        self.source
    }

    /// Set for sample estimates whose blocks cannot be full rank.
    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Zero-based entry lookup.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (Some(bi), Some(bj)) = (self.partition.block_of(i), self.partition.block_of(j)) else {
            panic!("index ({i}, {j}) out of range for dimension {}", self.dim());
        };
        if bi != bj {
            return 0.0;
        }
        let off = self.partition.ranges()[bi].0 - 1;
        self.blocks[bi][(i - off, j - off)]
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.trace()).sum()
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if p > DENSE_BLOCK_LIMIT {
            return Err(Error::Domain(format!(
                "refusing to materialize a {p}x{p} dense matrix (limit {DENSE_BLOCK_LIMIT})"
            )));
        }
        let mut out = DMatrix::zeros(p, p);
        for (range, b) in self.partition.offsets().zip(&self.blocks) {
            out.view_mut((range.start, range.start), (b.nrows(), b.ncols()))
                .copy_from(b);
        }
        Ok(out)
    }

    /// Re-express on a coarser partition by assembling the blocks that fall
    /// inside each coarse range.
    pub fn reblock(&self, coarser: &BlockPartition) -> Result<Self> {
        if !self.partition.refines(coarser) {
            return Err(Error::Domain(
                "target partition is not a coarsening of the current block structure".into(),
            ));
        }
        if coarser == &self.partition {
            return Ok(self.clone());
        }
        let mut blocks = Vec::with_capacity(coarser.len());
        let mut k = 0;
        for range in coarser.offsets() {
            let size = range.len();
            if size > DENSE_BLOCK_LIMIT {
                return Err(Error::Domain(format!(
                    "merged block of {size} variants exceeds the dense limit"
                )));
            }
            let mut m = DMatrix::zeros(size, size);
            while k < self.blocks.len() && self.partition.ranges()[k].1 <= range.end {
                let off = self.partition.ranges()[k].0 - 1 - range.start;
                let b = &self.blocks[k];
                m.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
                k += 1;
            }
            blocks.push(m);
        }
        Ok(Self {
            partition: coarser.clone(),
            blocks,
            source: self.source,
            singular: self.singular,
        })
    }

    /// Eigenvalues of every block, concatenated in block order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| SymmetricEigen::new(b.clone()).eigenvalues.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    /// Apply `f` to the spectrum of each block: `V diag(f(λ)) Vᵀ`.
    /// Eigenvalues in `[-tol, 0)` are clipped to zero first, where
    /// `tol = 1e-10 * trace / p`; anything more negative is an error.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let tol = PSD_CLIP_TOL * (self.trace() / self.dim() as f64).abs();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            if is_identity(b) {
                blocks.push(b * f(1.0));
                continue;
            }
            let eig = SymmetricEigen::new(b.clone());
            let mut vals = eig.eigenvalues.clone();
            for v in vals.iter_mut() {
                if *v < -tol {
                    return Err(Error::NotPsd {
                        min_eigenvalue: *v,
                        tolerance: -tol,
                    });
                }
                if *v < 0.0 {
                    *v = 0.0;
                }
                *v = f(*v);
            }
            let vecs = &eig.eigenvectors;
            let mut scaled = vecs.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= vals[j];
            }
            let mut m = &scaled * vecs.transpose();
            symmetrize(&mut m);
            blocks.push(m);
        }
        Ok(Self {
            partition: self.partition.clone(),
            blocks,
            source: self.source,
            singular: self.singular,
        })
    }

    /// `Σ^{-1/2}`, used to decorrelate genotypes. Fails on singular input.
    pub fn inverse_sqrt(&self) -> Result<Self> {
        let tol = PSD_CLIP_TOL * self.trace() / self.dim() as f64;
        let min = self
            .eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min <= tol {
            return Err(Error::Domain(format!(
                "matrix is numerically singular (smallest eigenvalue {min:e})"
            )));
        }
        self.spectral_map(|v| 1.0 / v.sqrt())
    }

    /// Blockwise product `self * other`; both must share a partition.
    /// The result is not symmetric in general and is returned as raw blocks.
    pub fn product_blocks(&self, other: &CovarianceMatrix) -> Result<Vec<DMatrix<f64>>> {
        if self.partition.ranges() != other.partition.ranges() {
            return Err(Error::Domain("block partitions differ".into()));
        }
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a * b)
            .collect())
    }

    /// Write the covariance export format: `p=<int> blocks=<int>` then each
    /// block's dense rows as CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p={} blocks={}", self.dim(), self.blocks.len())?;
        let mut line = String::new();
        for b in &self.blocks {
            for i in 0..b.nrows() {
                line.clear();
                for j in 0..b.ncols() {
                    if j > 0 {
                        line.push(',');
                    }
                    write!(line, "{:?}", b[(i, j)]).expect("write to String");
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R, source: CovSource) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Domain("empty covariance file".into()))??;
        let (p, nblocks) = parse_cov_header(&header)?;
        let mut blocks = Vec::with_capacity(nblocks);
        let mut sizes = Vec::with_capacity(nblocks);
        let mut rows_left = 0usize;
        let mut current: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Domain(format!("bad covariance entry: {e}")))?;
            if rows_left == 0 {
                rows_left = row.len();
                current = Vec::with_capacity(rows_left);
            } else if row.len() != current[0].len() {
                return Err(Error::Shape("ragged covariance block rows".into()));
            }
            current.push(row);
            rows_left -= 1;
            if rows_left == 0 {
                let b = current.len();
                sizes.push(b);
                blocks.push(DMatrix::from_fn(b, b, |i, j| current[i][j]));
            }
        }
        if rows_left != 0 {
            return Err(Error::Shape("truncated covariance block".into()));
        }
        if blocks.len() != nblocks || sizes.iter().sum::<usize>() != p {
            return Err(Error::Shape(format!(
                "header declares p={p} blocks={nblocks}, file holds {} blocks over {} variants",
                blocks.len(),
                sizes.iter().sum::<usize>()
            )));
        }
        let partition = BlockPartition::from_sizes(&sizes, "imported")?;
        Self::from_blocks(partition, blocks, source)
    }
}

fn parse_cov_header(header: &str) -> Result<(usize, usize)> {
    let mut p = None;
    let mut blocks = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("p", v)) => p = v.parse().ok(),
            Some(("blocks", v)) => blocks = v.parse().ok(),
            _ => {}
        }
    }
    match (p, blocks) {
        (Some(p), Some(b)) => Ok((p, b)),
        _ => Err(Error::Domain(format!(
            "covariance header must be `p=<int> blocks=<int>`, got {header:?}"
        ))),
    }
}

fn check_symmetric(m: &DMatrix<f64>, block: usize) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for j in 0..m.ncols() {
        for i in 0..j {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Domain(format!(
                    "block {block} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn is_identity(m: &DMatrix<f64>) -> bool {
    m.iter()
        .enumerate()
        .all(|(k, &v)| if k % (m.nrows() + 1) == 0 { v == 1.0 } else { v == 0.0 })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Auto-regressive correlation: entry `(i, j)` equals `rho^|i-j|`.
pub fn build_ar_covariance(rho: f64, p: usize) -> Result<CovarianceMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    let partition = BlockPartition::single(p)?;
    let block = ar_block(rho, p);
    let mut cov = CovarianceMatrix::from_blocks(partition, vec![block], CovSource::SyntheticAr)?;
    cov.partition.label = format!("ar({rho})");
    Ok(cov)
}

fn ar_block(rho: f64, p: usize) -> DMatrix<f64> {
    let powers: Vec<f64> = std::iter::successors(Some(1.0), |x| Some(x * rho))
        .take(p)
        .collect();
    DMatrix::from_fn(p, p, |i, j| powers[i.abs_diff(j)])
}

/// Block-diagonal assembly of per-block covariances.
pub fn build_block_covariance(
    partition: BlockPartition,
    per_block: &[CovarianceMatrix],
) -> Result<CovarianceMatrix> {
    if per_block.len() != partition.len() {
        return Err(Error::Shape(format!(
            "{} block matrices for {} ranges",
            per_block.len(),
            partition.len()
        )));
    }
    let mut blocks = Vec::with_capacity(per_block.len());
    for (k, (cov, size)) in per_block.iter().zip(partition.sizes()).enumerate() {
        if cov.dim() != size {
            return Err(Error::Shape(format!(
                "block {k} has dimension {}, range length is {size}",
                cov.dim()
            )));
        }
        blocks.push(cov.to_dense()?);
    }
    CovarianceMatrix::from_blocks(partition, blocks, CovSource::SyntheticBlock)
}

/// Block-diagonal matrix with an AR(`rhos[k]`) block of size `sizes[k]`.
pub fn build_ar_blocks(sizes: &[usize], rhos: &[f64]) -> Result<CovarianceMatrix> {
    if sizes.len() != rhos.len() {
        return Err(Error::Shape(format!(
            "{} block sizes but {} rho values",
            sizes.len(),
            rhos.len()
        )));
    }
    let partition = BlockPartition::from_sizes(sizes, "ar-blocks")?;
    let per_block = sizes
        .iter()
        .zip(rhos)
        .map(|(&s, &r)| build_ar_covariance(r, s))
        .collect::<Result<Vec<_>>>()?;
    build_block_covariance(partition, &per_block)
}

/// `n⁻¹XᵀX`, restricted to the blocks of `partition` when given.
pub fn estimate_covariance(
    geno: &GenotypeMatrix,
    partition: Option<&BlockPartition>,
) -> Result<CovarianceMatrix> {
    if !geno.is_standardized() {
        return Err(Error::State(
            "covariance estimation requires column-standardized genotypes".into(),
        ));
    }
    let (n, p) = (geno.n(), geno.p());
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    let partition = match partition {
        Some(part) if part.p() != p => {
            return Err(Error::Shape(format!(
                "partition covers {} variants, genotypes have {p}",
                part.p()
            )))
        }
        Some(part) => part.clone(),
        None => BlockPartition::single(p)?,
    };
    let values = geno.values();
    let inv_n = 1.0 / n as f64;
    let mut blocks = Vec::with_capacity(partition.len());
    let mut max_block = 0;
    for range in partition.offsets() {
        let size = range.len();
        if size > DENSE_BLOCK_LIMIT {
            return Err(Error::Domain(format!(
                "block of {size} variants exceeds the dense limit"
            )));
        }
        max_block = max_block.max(size);
        let x = values.columns(range.start, size);
        let xt = x.transpose();
        let mut s = &xt * xt.transpose();
        s *= inv_n;
        symmetrize(&mut s);
        blocks.push(s);
    }
    let mut cov = CovarianceMatrix::from_blocks(partition, blocks, CovSource::SampleEstimate)?;
    // Centered columns have rank at most n - 1.
    cov.singular = n - 1 < max_block;
    Ok(cov)
}

/// Symmetric PSD square root, computed independently per block.
pub fn matrix_sqrt(cov: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    cov.spectral_map(f64::sqrt)
}

/// Coarsest partition whose ranges each contain whole ranges of both inputs:
/// a boundary survives only when it is a block end in `a` and in `b`.
pub fn merge_ld_blocks(a: &BlockPartition, b: &BlockPartition) -> Result<BlockPartition> {
    if a.p() != b.p() {
        return Err(Error::Domain(format!(
            "partitions cover different ranges: 1..{} vs 1..{}",
            a.p(),
            b.p()
        )));
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut start = 1;
    let (ra, rb) = (a.ranges(), b.ranges());
    while i < ra.len() && j < rb.len() {
        let (ea, eb) = (ra[i].1, rb[j].1);
        if ea == eb {
            out.push((start, ea));
            start = ea + 1;
            i += 1;
            j += 1;
        } else if ea < eb {
            i += 1;
        } else {
            j += 1;
        }
    }
    BlockPartition::new(out, format!("merge({},{})", a.label(), b.label()))
}
