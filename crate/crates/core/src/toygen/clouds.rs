//! Point clouds from OFF and CSV files, and a synthetic shape corpus.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{format_f64, parse_numeric_csv, DistributionDataset};
use crate::distribution::{Distribution, LabeledDistribution, PointSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CloudLoadOptions {
    /// Points kept per cloud; all of them when the cloud is smaller.
    pub subsample: usize,
    pub seed: u64,
    /// Subtract each cloud's centroid.
    pub center: bool,
}

impl Default for CloudLoadOptions {
    fn default() -> Self {
        CloudLoadOptions {
            subsample: 200,
            seed: 0,
            center: true,
        }
    }
}

/// Vertex list of an OFF file. Faces are ignored.
pub fn parse_off(path: &Path, text: &str) -> Result<Vec<[f64; 3]>> {
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n').filter_map(|raw| {
        let at = offset;
        offset += raw.len() as u64;
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((at, line))
    });
    let (at, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, "empty OFF file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(path, at, "missing OFF header"))?
        .trim();
    // Some exporters put the counts on the header line.
    let (at, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| Error::parse(path, at, "missing vertex count"))?
    } else {
        (at, rest)
    };
    let n_vertices: usize = counts
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(path, at, format!("bad count line {counts:?}")))?;
    let mut out = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (at, line) = lines.next().ok_or_else(|| {
            Error::parse(
                path,
                text.len() as u64,
                format!("expected {n_vertices} vertices, found {}", out.len()),
            )
        })?;
        let mut v = [0.0; 3];
        let mut fields = line.split_whitespace();
        for slot in &mut v {
            *slot = fields
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(path, at, format!("bad vertex {line:?}")))?;
        }
        out.push(v);
    }
    Ok(out)
}

/// xyz rows of a CSV file; a non-numeric first line is taken as a header.
fn parse_xyz_csv(path: &Path, text: &str) -> Result<Vec<[f64; 3]>> {
    let first = text.lines().next().unwrap_or("");
    let has_header = first
        .split(',')
        .any(|f| !f.trim().is_empty() && f.trim().parse::<f64>().is_err());
    let skip = if has_header { first.len() + 1 } else { 0 };
    let body = text.get(skip.min(text.len())..).unwrap_or("");
    let rows = parse_numeric_csv(path, body.as_bytes(), None)?;
    rows.into_iter()
        .map(|r| {
            if r.len() < 3 {
                Err(Error::parse(
                    path,
                    0,
                    format!("need 3 columns, found {}", r.len()),
                ))
            } else {
                Ok([r[0], r[1], r[2]])
            }
        })
        .collect()
}

fn cloud_format(path: &Path) -> Option<&'static str> {
    match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "off" => Some("off"),
        "csv" => Some("csv"),
        _ => None,
    }
}

fn read_cloud(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match cloud_format(path) {
        Some("off") => parse_off(path, &text),
        _ => parse_xyz_csv(path, &text),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if !name.to_string_lossy().starts_with('.') {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// One class per subdirectory (sorted by name), one cloud per `.off` or
/// `.csv` file. Cloud `k` in global file order subsamples with stream `k`
/// of the seed, so results do not depend on thread scheduling.
pub fn load_point_cloud_dir(root: &Path, opts: &CloudLoadOptions) -> Result<DistributionDataset> {
    if opts.subsample == 0 {
        return Err(Error::invalid("subsample must be positive"));
    }
    let mut codebook = Vec::new();
    let mut files = Vec::new();
    for class_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = codebook.len();
        let clouds: Vec<PathBuf> = sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| p.is_file() && cloud_format(p).is_some())
            .collect();
        if clouds.is_empty() {
            return Err(Error::invalid(format!(
                "class directory {} has no point clouds",
                class_dir.display()
            )));
        }
        codebook.push(
            class_dir
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned(),
        );
        files.extend(clouds.into_iter().map(|p| (p, label)));
    }
    if codebook.is_empty() {
        return Err(Error::invalid(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let items = files
        .par_iter()
        .enumerate()
        .map(|(k, (path, label))| {
            let points = read_cloud(path)?;
            if points.is_empty() {
                return Err(Error::parse(path, 0, "no points"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let keep: Vec<usize> = if points.len() > opts.subsample {
                let mut idx = index::sample(&mut rng, points.len(), opts.subsample).into_vec();
                idx.sort_unstable();
                idx
            } else {
                (0..points.len()).collect()
            };
            let mut x = Array2::from_shape_fn((keep.len(), 3), |(i, j)| points[keep[i]][j]);
            if opts.center {
                let c = x.mean_axis(Axis(0)).expect("nonempty");
                x -= &c;
            }
            Ok(LabeledDistribution {
                payload: Distribution::Empirical(PointSet::uniform(x)?),
                label: *label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = DistributionDataset::new(codebook, 3);
    for item in items {
        ds.push(item)?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Surface of a cube. Its half-side is `sqrt(3/5)` times the scale, which
    /// gives it the covariance of the sphere of the same scale.
    Cube,
    Sphere,
    /// Ring torus with tube radius 0.35 of the scale, area-weighted.
    Torus,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Sphere, Shape::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Torus => "torus",
        }
    }

    pub fn sample(self, rng: &mut impl Rng, scale: f64, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|_| self.point(rng, scale)).collect()
    }

    fn point(self, rng: &mut impl Rng, scale: f64) -> [f64; 3] {
        match self {
            Shape::Sphere => loop {
                let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let r2: f64 = v.iter().map(|x| x * x).sum();
                if r2 > 1e-6 && r2 <= 1.0 {
                    let k = scale / r2.sqrt();
                    return v.map(|x| x * k);
                }
            },
            Shape::Cube => {
                let a = scale * 0.6f64.sqrt();
                let axis = rng.random_range(0..3);
                let side = if rng.random::<bool>() { a } else { -a };
                std::array::from_fn(|j| {
                    if j == axis {
                        side
                    } else {
                        rng.random_range(-a..a)
                    }
                })
            }
            Shape::Torus => {
                let (big, small) = (scale, 0.35 * scale);
                loop {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    // Accept in proportion to the local area element.
                    if rng.random::<f64>() * (big + small) <= big + small * theta.cos() {
                        let ring = big + small * theta.cos();
                        return [ring * phi.cos(), ring * phi.sin(), small * theta.sin()];
                    }
                }
            }
        }
    }
}

/// Writes `per_class` clouds of `points` points for each [`Shape`] under
/// `dir/<shape>/`, alternating OFF and CSV files. Scales are drawn from
/// U(0.9, 1.1) and every cloud gets a random offset.
pub fn write_shape_corpus(dir: &Path, per_class: usize, points: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for shape in Shape::ALL {
        let class_dir = dir.join(shape.name());
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        for k in 0..per_class {
            let scale = rng.random_range(0.9..1.1);
            let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
            let cloud = shape.sample(&mut rng, scale, points);
            let mut text = String::new();
            let path = if k % 2 == 0 {
                text.push_str(&format!("OFF\n{} 0 0\n", cloud.len()));
                class_dir.join(format!("{}_{k:03}.off", shape.name()))
            } else {
                text.push_str("x,y,z\n");
                class_dir.join(format!("{}_{k:03}.csv", shape.name()))
            };
            let sep = if k % 2 == 0 { " " } else { "," };
            for p in &cloud {
                let row: Vec<String> = p
                    .iter()
                    .zip(&shift)
                    .map(|(x, s)| format_f64(x + s))
                    .collect();
                text.push_str(&row.join(sep));
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
