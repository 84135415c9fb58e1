//! Argument parsing and command dispatch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use distemb::classify::{accuracy, fit_pipeline, CvGrid, ModelKind};
use distemb::dataset::{save_dataset, DistributionDataset};
use distemb::embed::{
    item_margins, pairwise_matrix, select_templates, EmbeddedDataset, GoodnessReport,
    TemplateStrategy,
};
use distemb::mmd::MmdEstimator;
use distemb::toygen::{gen_mean_separated, gen_three_class, write_shape_corpus, CloudLoadOptions};

use crate::bench::{run_bench, write_results, write_timings};
use crate::concentration::{run_concentration, write_rows};
use crate::config::{read_toml, ConcentrationConfig, DissKind, ExperimentConfig, GenSpec};
use crate::data::{load_any, DissChoice};
use crate::pipeline::{load_pipeline, save_pipeline};

#[derive(Debug, Parser)]
#[command(
    name = "distemb",
    version,
    about = "Classify probability distributions through dissimilarity embeddings"
)]
pub struct Cli {
    /// Worker threads; all logical cores by default. Results do not depend
    /// on this value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Saved dataset directory, or a directory of point clouds with one
    /// subdirectory per class.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Points kept per point cloud.
    #[arg(long, default_value_t = 200)]
    pub subsample: usize,
    /// Translate each point cloud to zero mean.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub center: bool,
}

#[derive(Debug, Args)]
pub struct DissArgs {
    #[arg(long, default_value = "wd")]
    pub diss: DissKind,
    /// Entropic regularization of the Wasserstein distance.
    #[arg(long, default_value_t = 0.01)]
    pub reg: f64,
    /// Order of the Wasserstein distance.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// MMD kernel bandwidth; median heuristic when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Unbiased MMD estimate.
    #[arg(long)]
    pub unbiased: bool,
    /// Clip ceiling; the 99th percentile over random pairs when absent.
    #[arg(long = "M")]
    pub bound_m: Option<f64>,
    /// Use squared dissimilarities.
    #[arg(long)]
    pub squared: bool,
    /// Random pairs used to estimate M.
    #[arg(long, default_value_t = 1000)]
    pub bound_pairs: usize,
}

impl DissArgs {
    fn choice(&self) -> DissChoice {
        DissChoice {
            kind: self.diss,
            reg: self.reg,
            p: self.p,
            bandwidth: self.bandwidth,
            estimator: if self.unbiased {
                MmdEstimator::Unbiased
            } else {
                MmdEstimator::Biased
            },
            bound_m: self.bound_m,
            squared: self.squared,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a toy dataset or a point-cloud corpus from a TOML spec.
    #[command(after_help = "Spec files set `kind` to three-class, mean-separated or shapes.")]
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the clipped dissimilarities of every item to the templates.
    #[command(after_help = "CSV columns: item, then one column per template id.")]
    Dist {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        diss: DissArgs,
        /// `all` or `per-class:<k>`.
        #[arg(long, default_value = "all")]
        templates: TemplateStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the embedding vectors (dissimilarities divided by M).
    #[command(after_help = "CSV columns: t<id> per template, then label.")]
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        diss: DissArgs,
        #[arg(long, default_value = "all")]
        templates: TemplateStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate and fit a classifier; saves the pipeline to a directory.
    #[command(
        after_help = "The output directory holds model.json, pipeline.json (with the CV table) and templates/."
    )]
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        diss: DissArgs,
        #[arg(long, default_value = "all")]
        templates: TemplateStrategy,
        #[arg(long, default_value = "linear")]
        model: ModelKind,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Comma-separated C grid.
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the accuracy of a trained pipeline on a labelled dataset.
    #[command(after_help = "Prediction CSV columns: item, label, predicted.")]
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Optional prediction CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run repeated train/test trials from an experiment config.
    #[command(
        after_help = "Results CSV columns: row (trial number or `mean`), method, n, d, accuracy, std, c, scale, \
cv_accuracy, error. Wall times go to <out>.timing.csv with columns trial, method, n, d, matrix_seconds, \
fit_seconds, evaluations, seconds_per_evaluation."
    )]
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo deviation frequencies of Gaussian estimates next to their bounds.
    #[command(
        after_help = "CSV columns: distance (bures or mmd), n, eps, trials, frequency, bound, exceeds."
    )]
    Concentration {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of items whose average class margin is below each gamma.
    #[command(after_help = "CSV columns: gamma, epsilon_hat.")]
    Goodness {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        diss: DissArgs,
        /// Comma-separated margins.
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2")]
        gamma: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load(data: &DataArgs, seed: u64) -> Result<DistributionDataset> {
    let opts = CloudLoadOptions {
        subsample: data.subsample,
        seed,
        center: data.center,
    };
    load_any(&data.dataset, &opts)
}

/// Sidecar path for wall times: `out.csv` becomes `out.timing.csv`.
pub fn timing_path(out: &Path) -> PathBuf {
    out.with_extension("timing.csv")
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()?;
    }
    match cli.command {
        Command::Gen { spec, out } => match read_toml::<GenSpec>(&spec)? {
            GenSpec::ThreeClass(s) => save_dataset(&gen_three_class(&s)?, &out)?,
            GenSpec::MeanSeparated(s) => save_dataset(&gen_mean_separated(&s)?, &out)?,
            GenSpec::Shapes {
                per_class,
                points,
                seed,
            } => write_shape_corpus(&out, per_class, points, seed)?,
        },
        Command::Dist {
            data,
            diss,
            templates,
            seed,
            out,
        } => {
            let ds = load(&data, seed)?;
            let spec = diss.choice().spec(&ds, diss.bound_pairs, seed)?;
            let t = select_templates(&ds, templates, seed)?;
            pairwise_matrix(&ds, &t, &spec)?.write_csv(sink(out.as_deref())?)?;
        }
        Command::Embed {
            data,
            diss,
            templates,
            seed,
            out,
        } => {
            let ds = load(&data, seed)?;
            let spec = diss.choice().spec(&ds, diss.bound_pairs, seed)?;
            let t = select_templates(&ds, templates, seed)?;
            let m = pairwise_matrix(&ds, &t, &spec)?;
            EmbeddedDataset::from_matrix(&m, &ds)?.write_csv(sink(out.as_deref())?)?;
        }
        Command::Train {
            data,
            diss,
            templates,
            model,
            folds,
            c,
            seed,
            out,
        } => {
            let ds = load(&data, seed)?;
            let spec = diss.choice().spec(&ds, diss.bound_pairs, seed)?;
            let mut grid = CvGrid {
                folds,
                seed,
                ..CvGrid::default()
            };
            if let Some(c) = c {
                grid.c_values = c;
            }
            let (fitted, cv) = fit_pipeline(&ds, &spec, templates, &grid, model)?;
            save_pipeline(&fitted, Some(&cv), &out)?;
            let best = cv
                .table
                .iter()
                .find(|r| r.params == cv.best)
                .map_or(f64::NAN, |r| r.mean_accuracy);
            println!("cv_accuracy {best}");
            println!("c {}", cv.best.c);
            if let Some(s) = cv.best.scale {
                println!("scale {s}");
            }
        }
        Command::Eval { model, data, out } => {
            let p = load_pipeline(&model)?;
            let ds = load(&data, 0)?;
            if ds.codebook() != p.model.codebook.as_slice() {
                bail!(
                    "dataset classes {:?} differ from the model's {:?}",
                    ds.codebook(),
                    p.model.codebook
                );
            }
            let pred = p.predict(&ds)?;
            let labels = ds.labels();
            if let Some(path) = out {
                let mut w = csv::Writer::from_writer(sink(Some(&path))?);
                w.write_record(["item", "label", "predicted"])?;
                for (i, (l, q)) in labels.iter().zip(&pred).enumerate() {
                    w.write_record([
                        i.to_string(),
                        ds.codebook()[*l].clone(),
                        ds.codebook()[*q].clone(),
                    ])?;
                }
                w.flush()?;
            }
            println!("accuracy {}", accuracy(&pred, &labels)?);
        }
        Command::Bench {
            spec,
            trials,
            seed,
            out,
        } => {
            let mut cfg: ExperimentConfig = read_toml(&spec)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.or(cfg.out.clone());
            let res = run_bench(&cfg)?;
            write_results(&res.rows, sink(out.as_deref())?)?;
            if let Some(path) = out {
                write_timings(&res.timings, sink(Some(&timing_path(&path)))?)?;
            }
        }
        Command::Concentration {
            spec,
            trials,
            seed,
            out,
        } => {
            let mut cfg: ConcentrationConfig = read_toml(&spec)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.or(cfg.out.clone());
            let res = run_concentration(&cfg)?;
            log::info!("C_v = {}, C_sigma = {}", res.c_v, res.c_sigma);
            write_rows(&res.rows, sink(out.as_deref())?)?;
        }
        Command::Goodness {
            data,
            diss,
            gamma,
            seed,
            out,
        } => {
            if gamma.is_empty() || gamma.iter().any(|g| !g.is_finite()) {
                bail!("--gamma needs finite values");
            }
            let ds = load(&data, seed)?;
            let spec = diss.choice().spec(&ds, diss.bound_pairs, seed)?;
            let all: Vec<usize> = (0..ds.len()).collect();
            let m = pairwise_matrix(&ds, &all, &spec)?;
            let margins = item_margins(m.values.view(), &ds.labels())?;
            let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
            w.write_record(["gamma", "epsilon_hat"])?;
            for g in gamma {
                let r = GoodnessReport::from_margins(margins.clone(), g);
                w.write_record([g.to_string(), r.epsilon_hat.to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
