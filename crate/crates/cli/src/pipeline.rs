//! On-disk form of a trained pipeline: `model.json`, `pipeline.json` and the
//! template distributions under `templates/`.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use distemb::classify::{CvParams, CvResult, FittedPipeline, ModelKind, TrainedModel};
use distemb::dataset::{load_dataset, save_dataset};
use distemb::embed::DissimilaritySpec;

pub const MODEL_FILE: &str = "model.json";
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const TEMPLATES_DIR: &str = "templates";

#[derive(Serialize)]
struct PipelineOut<'a> {
    kind: ModelKind,
    params: CvParams,
    spec: &'a DissimilaritySpec,
    template_ids: &'a [usize],
    cv: Option<&'a CvResult>,
}

#[derive(Deserialize)]
struct PipelineIn {
    kind: ModelKind,
    params: CvParams,
    spec: DissimilaritySpec,
    template_ids: Vec<usize>,
}

pub fn save_pipeline(p: &FittedPipeline, cv: Option<&CvResult>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    p.model.save(&dir.join(MODEL_FILE))?;
    let meta = PipelineOut {
        kind: p.kind,
        params: p.params,
        spec: &p.spec,
        template_ids: &p.template_ids,
        cv,
    };
    let path = dir.join(PIPELINE_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?)
        .with_context(|| format!("writing {}", path.display()))?;
    save_dataset(&p.templates, &dir.join(TEMPLATES_DIR))?;
    Ok(())
}

pub fn load_pipeline(dir: &Path) -> Result<FittedPipeline> {
    let model = TrainedModel::load(&dir.join(MODEL_FILE))?;
    let path = dir.join(PIPELINE_FILE);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let meta: PipelineIn =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    meta.spec.validate()?;
    let templates = load_dataset(&dir.join(TEMPLATES_DIR))?;
    if templates.len() != meta.template_ids.len() {
        anyhow::bail!(
            "{} lists {} templates but {} were found",
            path.display(),
            meta.template_ids.len(),
            templates.len()
        );
    }
    if model.kind() != meta.kind {
        anyhow::bail!(
            "model is {} but {} says {}",
            model.kind(),
            path.display(),
            meta.kind
        );
    }
    Ok(FittedPipeline {
        model,
        kind: meta.kind,
        params: meta.params,
        spec: meta.spec,
        templates,
        template_ids: meta.template_ids,
    })
}
