//! TOML configuration files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use distemb::classify::{CvGrid, ModelKind};
use distemb::embed::{MmdConfig, TemplateStrategy};
use distemb::ot::SinkhornConfig;
use distemb::toygen::{MeanSepSpec, ToySpec3Class};

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Input of `distemb gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenSpec {
    ThreeClass(ToySpec3Class),
    MeanSeparated(MeanSepSpec),
    /// Directory of sphere, cube and torus point clouds.
    Shapes {
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_per_class() -> usize {
    60
}

fn default_points() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DissKind {
    Wd,
    Bures,
    Mmd,
}

impl FromStr for DissKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wd" => Ok(DissKind::Wd),
            "bures" => Ok(DissKind::Bures),
            "mmd" => Ok(DissKind::Mmd),
            _ => bail!("dissimilarity must be wd, bures or mmd, got `{s}`"),
        }
    }
}

impl fmt::Display for DissKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DissKind::Wd => "wd",
            DissKind::Bures => "bures",
            DissKind::Mmd => "mmd",
        })
    }
}

/// A dissimilarity paired with a model, written `wd+kernel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub diss: DissKind,
    pub model: ModelKind,
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((d, m)) = s.split_once('+') else {
            bail!("method must look like `wd+kernel`, got `{s}`");
        };
        Ok(Method {
            diss: d.parse()?,
            model: m.parse()?,
        })
    }
}

impl TryFrom<String> for Method {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.diss, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Fresh train and test sets per trial from the three-class generator.
    Toy(ToySpec3Class),
    /// A saved dataset or point-cloud directory, split per trial.
    Directory {
        path: PathBuf,
        #[serde(default = "default_points")]
        subsample: usize,
        #[serde(default = "yes")]
        center: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Number of training distributions.
    N,
    /// Dimension of the toy problem.
    D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<usize>,
}

impl Sweep {
    /// Default grids for the two sweep modes.
    pub fn default_for(param: SweepParam) -> Self {
        let values = match param {
            SweepParam::N => vec![50, 100, 200, 400, 600],
            SweepParam::D => vec![2, 10, 25, 50, 100],
        };
        Sweep { param, values }
    }
}

/// Fixed clip ceilings; missing entries are estimated on each training set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundOverrides {
    pub wd: Option<f64>,
    pub bures: Option<f64>,
    pub mmd: Option<f64>,
}

impl BoundOverrides {
    pub fn get(&self, d: DissKind) -> Option<f64> {
        match d {
            DissKind::Wd => self.wd,
            DissKind::Bures => self.bures,
            DissKind::Mmd => self.mmd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub templates: TemplateStrategy,
    #[serde(default)]
    pub grid: CvGrid,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Test distributions per trial (toy source). For a directory source,
    /// items not used for training are tested, capped at this count.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Training distributions per trial when there is no `n` sweep; by
    /// default the toy `n_dists`, or half of a directory dataset.
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub wasserstein: SinkhornConfig,
    #[serde(default)]
    pub mmd: MmdConfig,
    #[serde(default)]
    pub bound_m: BoundOverrides,
    /// Random pairs used to estimate a missing clip ceiling.
    #[serde(default = "default_bound_pairs")]
    pub bound_pairs: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_n_test() -> usize {
    2000
}

fn default_bound_pairs() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.methods.is_empty() {
            bail!("no methods given");
        }
        if self.n_test == 0 {
            bail!("n_test must be positive");
        }
        if self.bound_pairs == 0 {
            bail!("bound_pairs must be positive");
        }
        for m in &self.methods {
            self.grid.validate(m.model)?;
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                bail!("sweep has no values");
            }
            if s.param == SweepParam::D && !matches!(self.dataset, DatasetSource::Toy(_)) {
                bail!("a dimension sweep needs the toy source");
            }
        }
        self.wasserstein.validate()?;
        self.mmd.kernel.validate()?;
        for (name, v) in [
            ("wd", self.bound_m.wd),
            ("bures", self.bound_m.bures),
            ("mmd", self.bound_m.mmd),
        ] {
            if let Some(m) = v {
                if !(m > 0.0) || !m.is_finite() {
                    bail!("bound_m.{name} must be positive, got {m}");
                }
            }
        }
        Ok(())
    }
}

/// Gaussian whose sampling error is measured by `distemb concentration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum ConcentrationSource {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    /// Class `class` of the three-class toy problem, at its centre mean and
    /// the midpoint of the class's `u` range.
    Toy {
        #[serde(flatten)]
        spec: ToySpec3Class,
        #[serde(default)]
        class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub target: ConcentrationSource,
    pub n_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_conc_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Bound on `‖x − m‖²`; the largest observed value when absent.
    #[serde(default)]
    pub c_v: Option<f64>,
    /// Bound on `‖Σ‖₂`; the true spectral norm when absent.
    #[serde(default)]
    pub c_sigma: Option<f64>,
    #[serde(default = "default_mmd_bandwidth")]
    pub mmd_bandwidth: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_conc_trials() -> usize {
    500
}

fn default_mmd_bandwidth() -> f64 {
    1.0
}

impl ConcentrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            bail!("n_grid must be nonempty with every N >= 2");
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            bail!("eps_grid must be nonempty and positive");
        }
        if !(self.mmd_bandwidth > 0.0) {
            bail!("mmd_bandwidth must be positive");
        }
        for (name, v) in [("c_v", self.c_v), ("c_sigma", self.c_sigma)] {
            if let Some(x) = v {
                if !(x > 0.0) || !x.is_finite() {
                    bail!("{name} must be positive, got {x}");
                }
            }
        }
        Ok(())
    }
}

/// Dissimilarity settings shared by the bench and the single-shot commands.
pub fn dissimilarity(
    kind: DissKind,
    wd: &SinkhornConfig,
    mmd: &MmdConfig,
) -> distemb::embed::Dissimilarity {
    use distemb::embed::Dissimilarity;
    match kind {
        DissKind::Wd => Dissimilarity::Wasserstein(*wd),
        DissKind::Bures => Dissimilarity::Bures,
        DissKind::Mmd => Dissimilarity::Mmd(*mmd),
    }
}
