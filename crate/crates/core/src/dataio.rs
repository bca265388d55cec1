//! Datasets: loading, saving, synthesis, splitting, per-category stats.
//!
//! A [`FeatureDataset`] is an `m x d` matrix of `f32` features plus one
//! category label per row. Labels found in files may be sparse; they are
//! remapped to dense ids `0..n_categories` (ascending original id) and
//! the mapping is kept so files written back use the original ids.
//!
//! Two interchangeable on-disk formats are supported: a `label,f0,..`
//! CSV and a little-endian binary format (magic `HVTF`) that round-trips
//! feature bits exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Magic bytes opening the binary dataset format.
pub const DATASET_MAGIC: [u8; 4] = *b"HVTF";
/// Current binary dataset format version.
pub const DATASET_VERSION: u8 = 1;

/// On-disk dataset encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Binary,
}

/// Labelled feature vectors with a dense category index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Array2<f32>,
    /// Dense label per row, `0..n_categories`.
    labels: Vec<u32>,
    /// Row indices per dense category; every entry is non-empty.
    category_index: Vec<Vec<usize>>,
    /// Dense id -> original file id, ascending.
    original_ids: Vec<u32>,
}

impl FeatureDataset {
    /// Builds a dataset from raw rows and their original (possibly
    /// sparse) labels, remapping labels to dense ids.
    pub fn from_parts(features: Array2<f32>, original_labels: Vec<u32>) -> Result<Self> {
        let m = features.nrows();
        if m == 0 {
            return Err(Error::InvalidParam("dataset has no rows".into()));
        }
        if original_labels.len() != m {
            return Err(Error::InvalidParam(format!(
                "{} rows but {} labels",
                m,
                original_labels.len()
            )));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "non-finite feature at row {}",
                bad / features.ncols()
            )));
        }

        let mut original_ids: Vec<u32> = original_labels.clone();
        original_ids.sort_unstable();
        original_ids.dedup();

        let dense_of = |orig: u32| original_ids.binary_search(&orig).unwrap() as u32;
        let labels: Vec<u32> = original_labels.iter().map(|&l| dense_of(l)).collect();

        let mut category_index = vec![Vec::new(); original_ids.len()];
        for (row, &l) in labels.iter().enumerate() {
            category_index[l as usize].push(row);
        }

        Ok(Self {
            features,
            labels,
            category_index,
            original_ids,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_categories(&self) -> usize {
        self.original_ids.len()
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    /// Dense label of row `i`.
    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Row indices belonging to dense category `cat`.
    pub fn rows_of(&self, cat: usize) -> &[usize] {
        &self.category_index[cat]
    }

    /// Original file id for a dense category id.
    pub fn original_id(&self, cat: usize) -> u32 {
        self.original_ids[cat]
    }

    pub fn original_ids(&self) -> &[u32] {
        &self.original_ids
    }

    /// Copies the rows of one category into a contiguous matrix.
    pub fn category_matrix(&self, cat: usize) -> Array2<f32> {
        let idx = &self.category_index[cat];
        self.features.select(Axis(0), idx)
    }

    /// New dataset made of the given rows (in the given order). Labels
    /// are re-densified, so categories absent from `rows` disappear.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.n_samples() {
                return Err(Error::InvalidParam(format!("row {r} out of range")));
            }
        }
        let features = self.features.select(Axis(0), rows);
        let original = rows
            .iter()
            .map(|&r| self.original_ids[self.labels[r] as usize])
            .collect();
        Self::from_parts(features, original)
    }

    /// Scales every row to unit L2 norm; all-zero rows are left as-is.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        normalize_rows(&mut out.features);
        out
    }
}

/// Scales each row of `m` to unit L2 norm (zero rows untouched).
pub fn normalize_rows(m: &mut Array2<f32>) {
    for mut row in m.rows_mut() {
        let norm: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        let norm = norm.sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| (f64::from(v) / norm) as f32);
        }
    }
}

/// Per-category first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStats {
    /// Mean feature vector.
    pub mean: Array1<f64>,
    /// Mean squared distance of the category's rows to `mean`
    /// (population form, divisor `count`).
    pub variance_sq: f64,
    pub count: usize,
}

/// Mean and scatter per dense category, accumulated in `f64`.
pub fn compute_stats(ds: &FeatureDataset) -> Vec<CategoryStats> {
    let d = ds.dim();
    (0..ds.n_categories())
        .map(|cat| {
            let rows = ds.rows_of(cat);
            let n = rows.len();
            let mut mean = Array1::<f64>::zeros(d);
            for &r in rows {
                for (j, &v) in ds.row(r).iter().enumerate() {
                    mean[j] += f64::from(v);
                }
            }
            mean.mapv_inplace(|v| v / n as f64);
            let mut scatter = 0.0;
            for &r in rows {
                let mut sq = 0.0;
                for (j, &v) in ds.row(r).iter().enumerate() {
                    let diff = f64::from(v) - mean[j];
                    sq += diff * diff;
                }
                scatter += sq;
            }
            CategoryStats {
                mean,
                variance_sq: scatter / n as f64,
                count: n,
            }
        })
        .collect()
}

/// Parameters for the synthetic planted-hierarchy generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_categories: usize,
    pub samples_per_category: usize,
    pub dim: usize,
    /// Fan-out of the planted grouping; categories sharing id digits in
    /// this base share ancestor offsets.
    pub hierarchy_branching: usize,
    /// Standard deviation of per-sample noise around the category mean.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_categories == 0
            || self.samples_per_category == 0
            || self.dim == 0
            || self.hierarchy_branching == 0
        {
            return Err(Error::InvalidParam("all synthesis counts must be >= 1".into()));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::InvalidParam("noise_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Depth of the planted grouping: least `d >= 1` with
/// `branching^d >= n_categories`.
pub fn planted_depth(cfg: &SynthConfig) -> usize {
    let b = cfg.hierarchy_branching;
    if b < 2 || cfg.n_categories <= 1 {
        return 1;
    }
    let mut d = 1usize;
    let mut reach = b;
    while reach < cfg.n_categories {
        reach = reach.saturating_mul(b);
        d += 1;
    }
    d
}

/// Ancestor group of category `cat` at `level` (0 = coarsest). Each
/// group is a contiguous block of category ids.
pub fn planted_group(cfg: &SynthConfig, cat: usize, level: usize) -> usize {
    let d = planted_depth(cfg);
    let b = cfg.hierarchy_branching.max(1);
    if b == 1 {
        return cat;
    }
    let shift = d.saturating_sub(1).saturating_sub(level.min(d - 1));
    cat / b.pow(shift as u32)
}

const CENTER_SCALE: f64 = 4.0;
const CENTER_DECAY: f64 = 0.35;

/// Gaussian blobs whose means are planted on a hierarchy: categories
/// sharing a base-`branching` id prefix share the corresponding ancestor
/// offsets, and offsets shrink by a constant factor per level. The same
/// config always yields the same bytes.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<FeatureDataset> {
    cfg.validate()?;
    let depth = planted_depth(cfg);
    let d = cfg.dim;

    let mut centers = Vec::with_capacity(cfg.n_categories);
    for cat in 0..cfg.n_categories {
        let mut center = Array1::<f64>::zeros(d);
        for level in 0..depth {
            let prefix = planted_group(cfg, cat, level) as u64;
            let mut rng = derive_rng(cfg.seed, "synth-center", &[level as u64, prefix]);
            let scale = CENTER_SCALE * CENTER_DECAY.powi(level as i32);
            for j in 0..d {
                let g: f64 = rng.sample(StandardNormal);
                center[j] += scale * g;
            }
        }
        centers.push(center);
    }

    let m = cfg.n_categories * cfg.samples_per_category;
    let mut features = Array2::<f32>::zeros((m, d));
    let mut labels = Vec::with_capacity(m);
    let mut row = 0;
    for (cat, center) in centers.iter().enumerate() {
        let mut rng = derive_rng(cfg.seed, "synth-sample", &[cat as u64]);
        for _ in 0..cfg.samples_per_category {
            for j in 0..d {
                let g: f64 = rng.sample(StandardNormal);
                features[[row, j]] = (center[j] + cfg.noise_scale * g) as f32;
            }
            labels.push(cat as u32);
            row += 1;
        }
    }

    FeatureDataset::from_parts(features, labels)
}

/// Per-category split into disjoint train and test sets of fixed sizes.
/// Rows are shuffled within each category by a stream derived from
/// `seed`, so splits are reproducible.
pub fn split_per_class(
    ds: &FeatureDataset,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(FeatureDataset, FeatureDataset)> {
    if train_per_class == 0 {
        return Err(Error::InvalidParam("train_per_class must be >= 1".into()));
    }
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for cat in 0..ds.n_categories() {
        let mut idx = ds.rows_of(cat).to_vec();
        let need = train_per_class + test_per_class;
        if idx.len() < need {
            return Err(Error::InvalidParam(format!(
                "category {} has {} samples, need {}",
                ds.original_id(cat),
                idx.len(),
                need
            )));
        }
        let mut rng = derive_rng(seed, "split", &[cat as u64]);
        idx.shuffle(&mut rng);
        train_rows.extend_from_slice(&idx[..train_per_class]);
        test_rows.extend_from_slice(&idx[train_per_class..need]);
    }
    Ok((ds.subset(&train_rows)?, ds.subset(&test_rows)?))
}

/// Splits rows into `n_folds` disjoint folds, stratified so every fold
/// holds at least one row of every category.
pub fn stratified_folds(ds: &FeatureDataset, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds == 0 {
        return Err(Error::InvalidParam("n_folds must be >= 1".into()));
    }
    let mut folds = vec![Vec::new(); n_folds];
    for cat in 0..ds.n_categories() {
        let mut idx = ds.rows_of(cat).to_vec();
        if idx.len() < n_folds {
            return Err(Error::InvalidParam(format!(
                "category {} has {} samples, fewer than {} folds",
                ds.original_id(cat),
                idx.len(),
                n_folds
            )));
        }
        let mut rng = derive_rng(seed, "fold", &[cat as u64]);
        idx.shuffle(&mut rng);
        for (k, r) in idx.into_iter().enumerate() {
            folds[k % n_folds].push(r);
        }
    }
    Ok(folds)
}

/// Reads a dataset in the given format.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<FeatureDataset> {
    match format {
        DataFormat::Csv => load_csv(path),
        DataFormat::Binary => load_binary(path),
    }
}

/// Writes a dataset in the given format, using original category ids.
pub fn save_dataset(ds: &FeatureDataset, path: &Path, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Csv => save_csv(ds, path),
        DataFormat::Binary => save_binary(ds, path),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn load_csv(path: &Path) -> Result<FeatureDataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut dim: Option<usize> = None;
    let mut values: Vec<f32> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_txt = fields.next().unwrap_or("").trim();
        let label: u32 = label_txt
            .parse()
            .map_err(|_| format_err(path, format!("row {row}: bad label {label_txt:?}")))?;
        let mut count = 0usize;
        for f in fields {
            let v: f32 = f
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("row {row}: bad value {:?}", f.trim())))?;
            if !v.is_finite() {
                return Err(format_err(path, format!("row {row}: non-finite value")));
            }
            values.push(v);
            count += 1;
        }
        match dim {
            None => {
                if count == 0 {
                    return Err(format_err(path, format!("row {row}: no feature values")));
                }
                dim = Some(count);
            }
            Some(d) if d != count => {
                return Err(format_err(
                    path,
                    format!("row {row}: {count} values, expected {d}"),
                ));
            }
            _ => {}
        }
        labels.push(label);
    }

    let dim = dim.ok_or_else(|| format_err(path, "no data rows"))?;
    let features = Array2::from_shape_vec((labels.len(), dim), values)
        .map_err(|e| format_err(path, e.to_string()))?;
    FeatureDataset::from_parts(features, labels)
}

fn save_csv(ds: &FeatureDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..ds.n_samples() {
        write!(w, "{}", ds.original_id(ds.label(i) as usize))?;
        for &v in ds.row(i) {
            // `Display` for f32 prints the shortest round-tripping form.
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn load_binary(path: &Path) -> Result<FeatureDataset> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = bytes.as_slice();
    let total = bytes.len();

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| format_err(path, "truncated header"))?;
    if magic != DATASET_MAGIC {
        return Err(format_err(path, "bad magic, not a dataset file"));
    }
    let version = r
        .read_u8()
        .map_err(|_| format_err(path, "truncated header"))?;
    if version != DATASET_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let m = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err(path, "truncated header"))? as usize;
    let dim = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err(path, "truncated header"))? as usize;
    if m == 0 || dim == 0 {
        return Err(format_err(path, "empty dataset"));
    }

    let expect = 4 + 1 + 4 + 4 + m * (4 + 4 * dim);
    if total != expect {
        return Err(format_err(
            path,
            format!("expected {expect} bytes for {m} rows x {dim} dims, file has {total}"),
        ));
    }

    let mut labels = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m * dim);
    for row in 0..m {
        labels.push(r.read_u32::<LittleEndian>().unwrap());
        for _ in 0..dim {
            let v = f32::from_bits(r.read_u32::<LittleEndian>().unwrap());
            if !v.is_finite() {
                return Err(format_err(path, format!("row {}: non-finite value", row + 1)));
            }
            values.push(v);
        }
    }

    let features = Array2::from_shape_vec((m, dim), values)
        .map_err(|e| format_err(path, e.to_string()))?;
    FeatureDataset::from_parts(features, labels)
}

fn save_binary(ds: &FeatureDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DATASET_MAGIC)?;
    w.write_u8(DATASET_VERSION)?;
    w.write_u32::<LittleEndian>(ds.n_samples() as u32)?;
    w.write_u32::<LittleEndian>(ds.dim() as u32)?;
    for i in 0..ds.n_samples() {
        w.write_u32::<LittleEndian>(ds.original_id(ds.label(i) as usize))?;
        for &v in ds.row(i) {
            w.write_u32::<LittleEndian>(v.to_bits())?;
        }
    }
    w.flush()?;
    Ok(())
}
