//! Labeled collections of distributions and their on-disk format.
//!
//! A dataset is a directory holding `manifest.json` plus one CSV payload per
//! item. Point-set payloads have one support point per row with an optional
//! trailing weight column (absent means uniform). Gaussian payloads have the
//! mean on the first row and the `d` covariance rows after it. Numbers are
//! written in shortest round-trip form, so a save/load cycle is bit exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::distribution::{
    Distribution, GaussianParams, LabeledDistribution, PayloadKind, PointSet,
};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_TAG: &str = "distemb-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionDataset {
    items: Vec<LabeledDistribution>,
    codebook: Vec<String>,
    dimension: usize,
}

impl DistributionDataset {
    pub fn new(codebook: Vec<String>, dimension: usize) -> Self {
        DistributionDataset {
            items: Vec::new(),
            codebook,
            dimension,
        }
    }

    pub fn from_items(
        codebook: Vec<String>,
        dimension: usize,
        items: Vec<LabeledDistribution>,
    ) -> Result<Self> {
        let mut ds = Self::new(codebook, dimension);
        for item in items {
            ds.push(item)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, item: LabeledDistribution) -> Result<()> {
        if item.payload.dim() != self.dimension {
            return Err(Error::DimensionMismatch(self.dimension, item.payload.dim()));
        }
        if item.label >= self.codebook.len() {
            return Err(Error::invalid(format!(
                "label {} outside codebook of {} classes",
                item.label,
                self.codebook.len()
            )));
        }
        self.items.push(item);
        Ok(())
    }

    pub fn items(&self) -> &[LabeledDistribution] {
        &self.items
    }

    pub fn codebook(&self) -> &[String] {
        &self.codebook
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.codebook.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.codebook.len()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }

    /// New dataset holding the items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Self::new(self.codebook.clone(), self.dimension);
        for &i in indices {
            let item = self
                .items
                .get(i)
                .ok_or_else(|| Error::invalid(format!("index {i} out of range")))?;
            out.items.push(item.clone());
        }
        Ok(out)
    }

    /// Concatenation of two datasets with identical codebook and dimension.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.codebook != other.codebook {
            return Err(Error::invalid("codebooks differ"));
        }
        if self.dimension != other.dimension {
            return Err(Error::DimensionMismatch(self.dimension, other.dimension));
        }
        let mut out = self.clone();
        out.items.extend(other.items.iter().cloned());
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dimension: usize,
    codebook: Vec<String>,
    items: Vec<ManifestItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestItem {
    label: usize,
    kind: PayloadKind,
    file: String,
    rows: usize,
    #[serde(default)]
    weighted: bool,
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn format_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn write_rows<'a>(path: &Path, rows: impl Iterator<Item = Vec<f64>> + 'a) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(ds: &DistributionDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("items")).map_err(|e| Error::io(dir, e))?;
    let mut items = Vec::with_capacity(ds.len());
    for (idx, item) in ds.items().iter().enumerate() {
        let file = format!("items/{idx:06}.csv");
        let path = dir.join(&file);
        let (rows, weighted) = match &item.payload {
            Distribution::Empirical(p) => {
                let weighted = !p.has_canonical_uniform_weights();
                let pts = p.points();
                write_rows(
                    &path,
                    (0..p.len()).map(|i| {
                        let mut r = pts.row(i).to_vec();
                        if weighted {
                            r.push(p.weights()[i]);
                        }
                        r
                    }),
                )?;
                (p.len(), weighted)
            }
            Distribution::Gaussian(g) => {
                let cov = g.covariance();
                let rows = std::iter::once(g.mean().to_vec())
                    .chain((0..g.dim()).map(|i| cov.row(i).to_vec()));
                write_rows(&path, rows)?;
                (g.dim() + 1, false)
            }
        };
        items.push(ManifestItem {
            label: item.label,
            kind: item.payload.kind(),
            file,
            rows,
            weighted,
        });
    }
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        dimension: ds.dimension(),
        codebook: ds.codebook().to_vec(),
        items,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Byte offset of a 1-based (line, column) position.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len();
    }
    text.len() as u64
}

pub fn load_dataset(dir: &Path) -> Result<DistributionDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            &path,
            byte_offset(&text, e.line(), e.column()),
            e.to_string(),
        )
    })?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::parse(
            &path,
            0,
            format!("unknown format tag {:?}", manifest.format),
        ));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::parse(
            &path,
            0,
            format!("unsupported version {}", manifest.version),
        ));
    }
    let d = manifest.dimension;
    let mut ds = DistributionDataset::new(manifest.codebook, d);
    for item in manifest.items {
        let payload_path = dir.join(&item.file);
        let payload = match item.kind {
            PayloadKind::PointSet => {
                let cols = if item.weighted { d + 1 } else { d };
                let (rows, _) = read_numeric_csv(&payload_path, cols, Some(item.rows))?;
                let n = rows.len();
                let mut pts = Array2::<f64>::zeros((n, d));
                let mut weights = Array1::<f64>::from_elem(n, 1.0 / n as f64);
                for (i, r) in rows.iter().enumerate() {
                    for j in 0..d {
                        pts[[i, j]] = r[j];
                    }
                    if item.weighted {
                        weights[i] = r[d];
                    }
                }
                Distribution::Empirical(
                    PointSet::new(pts, weights)
                        .map_err(|e| Error::parse(&payload_path, 0, e.to_string()))?,
                )
            }
            PayloadKind::Gaussian => {
                let (rows, _) = read_numeric_csv(&payload_path, d, Some(d + 1))?;
                let mean = Array1::from(rows[0].clone());
                let cov = Array2::from_shape_fn((d, d), |(i, j)| rows[i + 1][j]);
                Distribution::Gaussian(
                    GaussianParams::new(mean, cov)
                        .map_err(|e| Error::parse(&payload_path, 0, e.to_string()))?,
                )
            }
        };
        ds.push(LabeledDistribution {
            payload,
            label: item.label,
        })
        .map_err(|e| Error::parse(&path, 0, e.to_string()))?;
    }
    Ok(ds)
}

/// Reads a headerless CSV of floats with exactly `cols` fields per row.
/// Returns the rows and the total byte length.
pub(crate) fn read_numeric_csv(
    path: &Path,
    cols: usize,
    expected_rows: Option<usize>,
) -> Result<(Vec<Vec<f64>>, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_numeric_csv(path, &bytes, Some(cols))?;
    if let Some(n) = expected_rows {
        if rows.len() != n {
            return Err(Error::parse(
                path,
                bytes.len() as u64,
                format!("expected {n} rows, found {}", rows.len()),
            ));
        }
    }
    Ok((rows, bytes.len() as u64))
}

/// Parses headerless numeric CSV. With `cols = None` the first row fixes the
/// width.
pub(crate) fn parse_numeric_csv(
    path: &Path,
    bytes: &[u8],
    cols: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut width = cols;
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let offset = reader.position().byte();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let at = e.position().map(|p| p.byte()).unwrap_or(offset);
                return Err(Error::parse(path, at, e.to_string()));
            }
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::parse(
                path,
                offset,
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        let mut row = Vec::with_capacity(w);
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, offset, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    offset,
                    format!("non-finite value {field:?}"),
                ));
            }
            row.push(v);
        }
        out.push(row);
    }
    Ok(out)
}
