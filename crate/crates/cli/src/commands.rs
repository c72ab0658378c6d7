use std::fs;
use std::path::{Path, PathBuf};

use sim2real::config::{ConfigError, ExperimentConfig};
use sim2real::image::{load_dir, Image2D, IMAGE_EXT};
use sim2real::io::write_atomic;
use sim2real::metrics::{
    evaluate_realism_dirs, evaluate_segmentation_dirs, ExtractorKind, FeatureExtractor,
    MetricsError,
};
use sim2real::phantom::{
    generate_virtual_subject, load_label_slice, sample_population, save_label_slice,
    save_label_volume, PopulationSpec, VirtualSubjectSpec, SLICE_EXT, VOLUME_EXT,
};
use sim2real::pipeline::{run_pipeline_with, PipelineError, STAGES};
use sim2real::preprocess::{preprocess_real, preprocess_sim_pair, PreprocessParams};
use sim2real::simulate::{
    default_table, simulate_subject, SequenceKind, SequenceParams, SliceOptions,
};
use sim2real::translate::{
    train_cut, translate_batch, write_loss_log, TrainedModel, TranslateError,
};
use sim2real::{par, toy};

use crate::{Command, ConfigArgs, EvaluateCmd, Mode, PhantomCmd, TranslateCmd};

pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn numeric(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 3,
        message: e.to_string(),
    }
}

fn from_config(e: ConfigError) -> Failure {
    match e {
        ConfigError::Io { .. } => runtime(e),
        e => validation(e),
    }
}

fn from_translate(e: TranslateError) -> Failure {
    match e {
        TranslateError::InvalidSpec { .. }
        | TranslateError::DimsMismatch { .. }
        | TranslateError::EmptyDataset(_) => validation(e),
        TranslateError::Numeric { .. } => numeric(e),
        e => runtime(e),
    }
}

fn from_metrics(e: MetricsError) -> Failure {
    match e {
        MetricsError::NonConvergent | MetricsError::NegativeDistance(_) => numeric(e),
        e => runtime(e),
    }
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let base = match (&args.config, args.toy) {
        (Some(p), _) => ExperimentConfig::load(p).map_err(from_config)?,
        (None, true) => ExperimentConfig::toy(),
        (None, false) => ExperimentConfig::default(),
    };
    base.with_overrides(&args.overrides).map_err(from_config)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_atomic(path, text.as_bytes()).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Phantom(PhantomCmd::Generate {
            spec,
            out,
            seed,
            overrides,
        }) => phantom_generate(spec.as_deref(), &out, seed, &overrides),
        Command::Simulate {
            subjects,
            seq,
            out,
            variation,
            slices,
            pgm,
        } => simulate(&subjects, seq.as_deref(), &out, variation, slices, pgm),
        Command::Preprocess {
            input,
            mode,
            out,
            width,
            height,
            margin,
        } => preprocess(
            &input,
            mode,
            &out,
            &PreprocessParams {
                width,
                height,
                margin,
                real_resize: None,
            },
        ),
        Command::Translate(TranslateCmd::Train {
            sim,
            real,
            config,
            overrides,
            out,
            log,
        }) => {
            let cfg = load_config(&ConfigArgs {
                config,
                toy: false,
                overrides,
            })?;
            translate_train(&sim, &real, &cfg, &out, log)
        }
        Command::Translate(TranslateCmd::Apply { ckpt, input, out }) => {
            translate_apply(&ckpt, &input, &out)
        }
        Command::Evaluate(EvaluateCmd::Fid {
            sim,
            real,
            translated,
            extractor,
            seed,
            report,
        }) => {
            let ex = FeatureExtractor::new(extractor, seed);
            let r = evaluate_realism_dirs(&sim, &real, translated.as_deref(), &ex)
                .map_err(from_metrics)?;
            write_text(&report, &r.to_csv())?;
            print!("{}", r.to_csv());
            Ok(())
        }
        Command::Evaluate(EvaluateCmd::Seg { pred, gt, report }) => {
            let r = evaluate_segmentation_dirs(&pred, &gt).map_err(from_metrics)?;
            write_text(&report, &r.to_csv())?;
            for (class, dice, hd) in r.class_means() {
                let hd = hd.map_or("NA".to_string(), |h| format!("{h:.3}"));
                println!("{class}: dice {dice:.4} hausdorff_mm {hd}");
            }
            Ok(())
        }
        Command::Run(args) => run(&load_config(&args)?),
        Command::Validate(args) => validate(&args),
        Command::Info => {
            info();
            Ok(())
        }
        Command::Version => {
            println!("sim2real {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::Reproduce {
            config,
            overrides,
            seeds,
            out,
        } => {
            let base = match &config {
                Some(p) => ExperimentConfig::load(p).map_err(from_config)?,
                None => ExperimentConfig::toy(),
            };
            let base = base.with_overrides(&overrides).map_err(from_config)?;
            reproduce(&base, seeds, &out)
        }
    }
}

fn phantom_generate(
    spec: Option<&Path>,
    out: &Path,
    seed: u64,
    overrides: &[String],
) -> Result<(), Failure> {
    let spec: PopulationSpec = read_json(spec)?;
    // reuse the experiment override syntax on the population section
    let prefixed: Vec<String> = overrides
        .iter()
        .map(|o| format!("population.{o}"))
        .collect();
    let spec = ExperimentConfig {
        population: spec,
        ..ExperimentConfig::default()
    }
    .with_overrides(&prefixed)
    .map_err(from_config)?
    .population;
    let subjects = sample_population(&spec, seed).map_err(validation)?;
    create_dir(out)?;
    let opts = SliceOptions::default();
    let written = par::map_slice(&subjects, |s| -> Result<(), String> {
        let (ed, es) =
            generate_virtual_subject(s, opts.dims, opts.spacing).map_err(|e| e.to_string())?;
        for v in [ed, es] {
            let path = out.join(format!("{}_{}.{VOLUME_EXT}", s.subject_id, v.phase()));
            save_label_volume(&v, &path).map_err(|e| e.to_string())?;
        }
        Ok(())
    });
    written
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let json = serde_json::to_string_pretty(&subjects).expect("subjects serialize");
    write_text(&out.join("subjects.json"), &json)?;
    println!("wrote {} subjects to {}", subjects.len(), out.display());
    Ok(())
}

fn simulate(
    subjects: &Path,
    seq: Option<&Path>,
    out: &Path,
    variation: f64,
    n_slices: usize,
    pgm: bool,
) -> Result<(), Failure> {
    let text = fs::read_to_string(subjects)
        .map_err(|e| runtime(format!("{}: {e}", subjects.display())))?;
    let specs: Vec<VirtualSubjectSpec> = serde_json::from_str(&text)
        .map_err(|e| validation(format!("{}: {e}", subjects.display())))?;
    let seq: SequenceParams = read_json(seq)?;
    let opts = SliceOptions {
        n_slices,
        ..SliceOptions::default()
    };
    let table = default_table();
    create_dir(out)?;
    let mut count = 0;
    for s in &specs {
        let slices = simulate_subject(s, &seq, &table, variation, &opts).map_err(validation)?;
        for sl in slices {
            let name = format!(
                "{}_{}_{:02}",
                s.subject_id,
                sl.labels.phase(),
                sl.labels.slice_index()
            );
            sl.image
                .save(&out.join(format!("{name}.{IMAGE_EXT}")))
                .map_err(runtime)?;
            save_label_slice(&sl.labels, &out.join(format!("{name}.{SLICE_EXT}")))
                .map_err(runtime)?;
            if pgm {
                sl.image
                    .save_pgm16(&out.join(format!("{name}.pgm")))
                    .map_err(runtime)?;
            }
            count += 1;
        }
    }
    println!("wrote {count} images to {}", out.display());
    Ok(())
}

fn preprocess(
    input: &Path,
    mode: Mode,
    out: &Path,
    params: &PreprocessParams,
) -> Result<(), Failure> {
    params.validate().map_err(validation)?;
    let images = load_dir(input).map_err(runtime)?;
    create_dir(out)?;
    for (path, img) in &images {
        let name = stem(path);
        let result = match mode {
            Mode::Sim => {
                let lpath = path.with_extension(SLICE_EXT);
                let labels = load_label_slice(&lpath)
                    .map_err(|e| runtime(format!("{}: {e}", lpath.display())))?;
                let (img, labels) = preprocess_sim_pair(img, &labels, params)
                    .map_err(|e| runtime(format!("{name}: {e}")))?;
                save_label_slice(&labels, &out.join(format!("{name}.{SLICE_EXT}")))
                    .map_err(runtime)?;
                img
            }
            Mode::Real => {
                preprocess_real(img, params).map_err(|e| runtime(format!("{name}: {e}")))?
            }
        };
        result
            .save(&out.join(format!("{name}.{IMAGE_EXT}")))
            .map_err(runtime)?;
    }
    println!("wrote {} images to {}", images.len(), out.display());
    Ok(())
}

fn load_images(dir: &Path) -> Result<(Vec<String>, Vec<Image2D>), Failure> {
    Ok(load_dir(dir)
        .map_err(runtime)?
        .into_iter()
        .map(|(p, i)| (stem(&p), i))
        .unzip())
}

fn translate_train(
    sim: &Path,
    real: &Path,
    cfg: &ExperimentConfig,
    out: &Path,
    log: Option<PathBuf>,
) -> Result<(), Failure> {
    let (_, sim) = load_images(sim)?;
    let (_, real) = load_images(real)?;
    let log_path = log.unwrap_or_else(|| out.with_file_name("train_log.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let (model, records) = match train_cut(
        &sim,
        &real,
        &cfg.generator,
        &cfg.discriminator,
        &cfg.translator,
    ) {
        Ok(r) => r,
        Err(TranslateError::Numeric {
            iteration,
            last_good,
            log,
        }) => {
            let path = out.with_extension("last_good.s2rckpt");
            last_good.save(&path).map_err(runtime)?;
            write_text(&log_path, &write_loss_log(&log))?;
            return Err(numeric(format!(
                "non-finite values at iteration {iteration}; last good model saved to {}",
                path.display()
            )));
        }
        Err(e) => return Err(from_translate(e)),
    };
    model.save(out).map_err(runtime)?;
    write_text(&log_path, &write_loss_log(&records))?;
    println!(
        "model {} ({} iterations) -> {}",
        model.model_id(),
        model.iterations_done,
        out.display()
    );
    Ok(())
}

fn translate_apply(ckpt: &Path, input: &Path, out: &Path) -> Result<(), Failure> {
    let model =
        TrainedModel::load(ckpt).map_err(|e| runtime(format!("{}: {e}", ckpt.display())))?;
    let (names, images) = load_images(input)?;
    let translated = translate_batch(&model, &images).map_err(from_translate)?;
    create_dir(out)?;
    for (n, img) in names.iter().zip(&translated) {
        img.save(&out.join(format!("{n}.{IMAGE_EXT}")))
            .map_err(runtime)?;
    }
    println!(
        "translated {} images with model {}",
        translated.len(),
        model.model_id()
    );
    Ok(())
}

fn run(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let outcome = run_pipeline_with(cfg, |stage, event| {
        if event == "start" {
            eprintln!("[{stage}]");
        }
    })
    .map_err(|e| match e {
        PipelineError::Config(e) => from_config(e),
        e @ PipelineError::Numeric { .. } => numeric(e),
        e => runtime(e),
    })?;
    print!("{}", outcome.report.to_csv());
    println!("outputs in {}", outcome.root.display());
    Ok(())
}

fn validate(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let issues = cfg.findings();
    if issues.is_empty() {
        println!("ok: 0 findings (config hash {})", cfg.hash());
        return Ok(());
    }
    for i in &issues {
        println!("{i}");
    }
    Err(validation(format!("{} finding(s)", issues.len())))
}

fn info() {
    println!("extractors:");
    for k in ExtractorKind::ALL {
        println!("  {} (d={})", k.name(), FeatureExtractor::new(k, 0).dim());
    }
    println!("sequence kinds:");
    for k in [SequenceKind::Spgr, SequenceKind::Bssfp] {
        println!("  {k}");
    }
    println!("pipeline stages: {}", STAGES.join(", "));
    println!(
        "parallel: {} ({} threads)",
        par::is_parallel(),
        par::thread_count()
    );
}

fn reproduce(base: &ExperimentConfig, n: u64, out: &Path) -> Result<(), Failure> {
    base.validate().map_err(from_config)?;
    println!("seed,fid_sim_vs_real,fid_translated_vs_real,reduced,seconds");
    let seeds: Vec<u64> = (0..n).collect();
    let results = toy::reproduce(base, &seeds, out, |r| {
        println!(
            "{},{:.6},{:.6},{},{:.1}",
            r.seed,
            r.fid_sim,
            r.fid_translated,
            r.reduced(),
            r.seconds
        );
    })
    .map_err(|e| match e {
        e @ PipelineError::Numeric { .. } => numeric(e),
        e => runtime(e),
    })?;
    let reduced = results.iter().filter(|r| r.reduced()).count();
    println!("FID reduced in {reduced} of {n} seeds");
    Ok(())
}
