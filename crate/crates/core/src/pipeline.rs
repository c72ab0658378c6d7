//! End-to-end experiment runner.
//!
//! Layout under `output_root`:
//!
//! ```text
//! labels/         phantom label slices (.s2rslc)
//! sim/            simulated images, full field of view
//! real/           real-domain images (procedural or copied from a directory)
//! preprocessed/   sim/, sim_labels/, real/ at the configured size
//! checkpoints/    model.s2rckpt (last_good.s2rckpt after a numeric failure)
//! translated/     translated simulated images
//! reports/        fid.csv, train_log.csv
//! manifest.json
//! ```
//!
//! Each stage writes into a hidden sibling directory and renames it into place when
//! it finishes, so a failure never leaves a half-written stage behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, RealSource};
use crate::image::{load_dir, Image2D, IMAGE_EXT, IMAGE_SCHEMA};
use crate::io::write_atomic;
use crate::metrics::{evaluate_realism, FeatureExtractor, RealismReport};
use crate::phantom::{
    extract_midventricular_slices, generate_virtual_subject, sample_population, save_label_slice,
    LabelSlice, PopulationSpec, SLICE_EXT,
};
use crate::preprocess::{preprocess_real, preprocess_sim_pair};
use crate::simulate::{default_table, simulate_slice, SequenceParams};
use crate::tensor::CHECKPOINT_MAGIC;
use crate::toy::apply_real_style;
use crate::translate::{
    train_cut, translate_batch, write_loss_log, TranslateError, TranslatorConfig,
};
use crate::{par, seed};

pub const STAGES: [&str; 7] = [
    "phantom",
    "simulate",
    "real",
    "preprocess",
    "train",
    "translate",
    "evaluate",
];
pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.s2rckpt";
pub const LAST_GOOD_FILE: &str = "last_good.s2rckpt";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
    #[error("stage train hit a numeric error at iteration {iteration}; last good model saved to {checkpoint}")]
    Numeric {
        iteration: usize,
        checkpoint: PathBuf,
    },
}

fn at<E: Into<BoxError>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

/// Seed handed to each stage, derived from the master seed by stage name.
pub fn stage_seeds(master: u64) -> BTreeMap<&'static str, u64> {
    [
        "phantom",
        "simulate",
        "real.phantom",
        "real.simulate",
        "real.style",
        "translate",
        "metrics",
    ]
    .into_iter()
    .map(|s| (s, seed::derive_seed(master, s, 0)))
    .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub versions: BTreeMap<&'static str, String>,
    pub seeds: BTreeMap<&'static str, u64>,
    pub completed: Vec<&'static str>,
    pub failed: Option<&'static str>,
    pub counts: BTreeMap<&'static str, usize>,
    pub model_id: Option<String>,
}

impl Manifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            config: cfg.clone(),
            versions: BTreeMap::from([
                ("sim2real", env!("CARGO_PKG_VERSION").to_string()),
                ("image_format", IMAGE_SCHEMA.to_string()),
                ("checkpoint_format", CHECKPOINT_MAGIC.to_string()),
            ]),
            seeds: stage_seeds(cfg.seed),
            completed: Vec::new(),
            failed: None,
            counts: BTreeMap::new(),
            model_id: None,
        }
    }

    fn write(&self, root: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&root.join(MANIFEST), json.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub root: PathBuf,
    pub report: RealismReport,
    pub model_id: String,
    pub manifest: Manifest,
}

/// A stage's output directory, built under a temporary name.
struct StageDir {
    tmp: PathBuf,
    target: PathBuf,
}

impl StageDir {
    fn create(root: &Path, name: &str) -> std::io::Result<Self> {
        let tmp = root.join(format!(".{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Self {
            tmp,
            target: root.join(name),
        })
    }

    fn sub(&self, name: &str) -> std::io::Result<PathBuf> {
        let p = self.tmp.join(name);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    fn commit(self) -> std::io::Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.tmp, &self.target)?;
        Ok(self.target)
    }
}

struct Case {
    name: String,
    subject: String,
    labels: LabelSlice,
}

fn label_cases(
    pop: &PopulationSpec,
    pop_seed: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<Case>, BoxError> {
    let subjects = sample_population(pop, pop_seed)?;
    let per_subject = par::map_slice(&subjects, |s| -> Result<Vec<Case>, BoxError> {
        let (ed, es) = generate_virtual_subject(s, cfg.slices.dims, cfg.slices.spacing)?;
        let mut slices = extract_midventricular_slices(&ed, cfg.slices.n_slices)?;
        slices.extend(extract_midventricular_slices(&es, cfg.slices.n_slices)?);
        Ok(slices
            .into_iter()
            .map(|l| Case {
                name: format!("{}_{}_{:02}", s.subject_id, l.phase(), l.slice_index()),
                subject: s.subject_id.clone(),
                labels: l,
            })
            .collect())
    });
    let mut out = Vec::new();
    for cases in per_subject {
        out.extend(cases?);
    }
    Ok(out)
}

fn simulate_cases(
    cases: &[Case],
    seq_seed: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<Image2D>, BoxError> {
    let seq = SequenceParams {
        seed: seq_seed,
        ..cfg.sequence.clone()
    };
    let table = default_table();
    par::map_slice(cases, |c| {
        simulate_slice(&c.subject, &c.labels, &seq, &table, cfg.variation_pct)
    })
    .into_iter()
    .map(|r| r.map_err(BoxError::from))
    .collect()
}

fn save_images(dir: &Path, names: &[String], images: &[Image2D]) -> Result<(), BoxError> {
    for (n, img) in names.iter().zip(images) {
        img.save(&dir.join(format!("{n}.{IMAGE_EXT}")))?;
    }
    Ok(())
}

/// Runs every stage in order. Completed stages stay on disk if a later one fails,
/// and the manifest records which stage failed.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome, PipelineError> {
    run_pipeline_with(cfg, |_, _| {})
}

/// [`run_pipeline`] with a callback invoked as `(stage, "start" | "done")`.
pub fn run_pipeline_with(
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(&'static str, &'static str),
) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let root = cfg.output_root.clone();
    fs::create_dir_all(&root).map_err(at("setup"))?;
    let mut manifest = Manifest::new(cfg);
    let result = run_stages(cfg, &root, &mut manifest, &mut progress);
    if let Err(e) = &result {
        manifest.failed = Some(match e {
            PipelineError::Stage { stage, .. } => stage,
            _ => "train",
        });
    }
    manifest.write(&root).map_err(at("manifest"))?;
    result.map(|(report, model_id)| PipelineOutcome {
        root,
        report,
        model_id,
        manifest,
    })
}

fn run_stages(
    cfg: &ExperimentConfig,
    root: &Path,
    manifest: &mut Manifest,
    progress: &mut impl FnMut(&'static str, &'static str),
) -> Result<(RealismReport, String), PipelineError> {
    let seeds = manifest.seeds.clone();
    let mut begin = |stage: &'static str, m: &mut Manifest| -> Result<(), PipelineError> {
        m.write(root).map_err(at(stage))?;
        progress(stage, "start");
        Ok(())
    };

    begin("phantom", manifest)?;
    let cases = label_cases(&cfg.population, seeds["phantom"], cfg).map_err(at("phantom"))?;
    let names: Vec<String> = cases.iter().map(|c| c.name.clone()).collect();
    let stage = StageDir::create(root, "labels").map_err(at("phantom"))?;
    for c in &cases {
        save_label_slice(
            &c.labels,
            &stage.tmp.join(format!("{}.{SLICE_EXT}", c.name)),
        )
        .map_err(at("phantom"))?;
    }
    stage.commit().map_err(at("phantom"))?;
    manifest.counts.insert("labels", cases.len());
    manifest.completed.push("phantom");

    begin("simulate", manifest)?;
    let sim = simulate_cases(&cases, seeds["simulate"], cfg).map_err(at("simulate"))?;
    let stage = StageDir::create(root, "sim").map_err(at("simulate"))?;
    save_images(&stage.tmp, &names, &sim).map_err(at("simulate"))?;
    stage.commit().map_err(at("simulate"))?;
    manifest.counts.insert("sim", sim.len());
    manifest.completed.push("simulate");

    begin("real", manifest)?;
    let (real_names, real) = real_domain(cfg, &seeds).map_err(at("real"))?;
    let stage = StageDir::create(root, "real").map_err(at("real"))?;
    save_images(&stage.tmp, &real_names, &real).map_err(at("real"))?;
    stage.commit().map_err(at("real"))?;
    manifest.counts.insert("real", real.len());
    manifest.completed.push("real");

    begin("preprocess", manifest)?;
    let pairs = par::map_slice(&cases, |c| c.labels.clone())
        .into_iter()
        .zip(&sim)
        .map(|(l, img)| preprocess_sim_pair(img, &l, &cfg.preprocess))
        .collect::<Result<Vec<_>, _>>()
        .map_err(at("preprocess"))?;
    let (sim_pp, sim_labels): (Vec<Image2D>, Vec<LabelSlice>) = pairs.into_iter().unzip();
    let real_pp = par::map_slice(&real, |img| preprocess_real(img, &cfg.preprocess))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(at("preprocess"))?;
    let stage = StageDir::create(root, "preprocessed").map_err(at("preprocess"))?;
    let dir = stage.sub("sim").map_err(at("preprocess"))?;
    save_images(&dir, &names, &sim_pp).map_err(at("preprocess"))?;
    let dir = stage.sub("sim_labels").map_err(at("preprocess"))?;
    for (n, l) in names.iter().zip(&sim_labels) {
        save_label_slice(l, &dir.join(format!("{n}.{SLICE_EXT}"))).map_err(at("preprocess"))?;
    }
    let dir = stage.sub("real").map_err(at("preprocess"))?;
    save_images(&dir, &real_names, &real_pp).map_err(at("preprocess"))?;
    stage.commit().map_err(at("preprocess"))?;
    manifest.completed.push("preprocess");

    begin("train", manifest)?;
    let tcfg = TranslatorConfig {
        seed: seeds["translate"],
        ..cfg.translator.clone()
    };
    let stage = StageDir::create(root, "checkpoints").map_err(at("train"))?;
    let reports = root.join("reports");
    fs::create_dir_all(&reports).map_err(at("train"))?;
    let (model, log) = match train_cut(&sim_pp, &real_pp, &cfg.generator, &cfg.discriminator, &tcfg)
    {
        Ok(r) => r,
        Err(TranslateError::Numeric {
            iteration,
            last_good,
            log,
        }) => {
            last_good
                .save(&stage.tmp.join(LAST_GOOD_FILE))
                .map_err(at("train"))?;
            write_atomic(
                &reports.join("train_log.csv"),
                write_loss_log(&log).as_bytes(),
            )
            .map_err(at("train"))?;
            let dir = stage.commit().map_err(at("train"))?;
            return Err(PipelineError::Numeric {
                iteration,
                checkpoint: dir.join(LAST_GOOD_FILE),
            });
        }
        Err(e) => return Err(at("train")(e)),
    };
    model
        .save(&stage.tmp.join(CHECKPOINT_FILE))
        .map_err(at("train"))?;
    write_atomic(
        &reports.join("train_log.csv"),
        write_loss_log(&log).as_bytes(),
    )
    .map_err(at("train"))?;
    stage.commit().map_err(at("train"))?;
    let model_id = model.model_id();
    manifest.model_id = Some(model_id.clone());
    manifest.completed.push("train");

    begin("translate", manifest)?;
    let translated = translate_batch(&model, &sim_pp).map_err(at("translate"))?;
    let stage = StageDir::create(root, "translated").map_err(at("translate"))?;
    save_images(&stage.tmp, &names, &translated).map_err(at("translate"))?;
    stage.commit().map_err(at("translate"))?;
    manifest.completed.push("translate");

    begin("evaluate", manifest)?;
    let extractor = FeatureExtractor::new(cfg.metrics.extractor, seeds["metrics"]);
    let report = evaluate_realism(&sim_pp, &real_pp, Some(&translated), &extractor)
        .map_err(at("evaluate"))?;
    write_atomic(&reports.join("fid.csv"), report.to_csv().as_bytes()).map_err(at("evaluate"))?;
    manifest.completed.push("evaluate");
    progress("evaluate", "done");
    Ok((report, model_id))
}

fn real_domain(
    cfg: &ExperimentConfig,
    seeds: &BTreeMap<&'static str, u64>,
) -> Result<(Vec<String>, Vec<Image2D>), BoxError> {
    match &cfg.real {
        RealSource::Procedural { population, style } => {
            let cases = label_cases(population, seeds["real.phantom"], cfg)?;
            let raw = simulate_cases(&cases, seeds["real.simulate"], cfg)?;
            let styled = par::map_range(cases.len(), |i| -> Result<Image2D, BoxError> {
                // Styled at the preprocessed geometry so both domains frame the heart alike.
                let (img, _) = preprocess_sim_pair(&raw[i], &cases[i].labels, &cfg.preprocess)?;
                let seed = seed::derive_seed(seeds["real.style"], "image", i as u64);
                Ok(apply_real_style(&img, style, seed)?.tag("domain", "real"))
            });
            let images = styled.into_iter().collect::<Result<Vec<_>, _>>()?;
            Ok((
                cases
                    .into_iter()
                    .map(|c| format!("real_{}", c.name))
                    .collect(),
                images,
            ))
        }
        RealSource::Directory { path } => {
            let loaded = load_dir(path)?;
            if loaded.is_empty() {
                return Err(format!("no .{IMAGE_EXT} files in {}", path.display()).into());
            }
            Ok(loaded
                .into_iter()
                .map(|(p, img)| {
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned());
                    (stem.unwrap_or_default(), img)
                })
                .unzip())
        }
    }
}
