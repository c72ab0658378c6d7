use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::loss::{lsgan_d_loss, lsgan_g_loss, patchnce_loss, sample_patches};
use super::nets::GenOutput;
use super::{
    invalid, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ProjectionHeads,
    TranslateError, TranslatorConfig,
};
use crate::image::Image2D;
use crate::par;
use crate::seed;
use crate::tensor::{Adam, Checkpoint, Tape, Tensor, TensorError, Var};

pub const LOSS_LOG_HEADER: &str = "iteration,loss_D,loss_G,loss_NCE,loss_NCE_id";

/// Losses of one training iteration (NCE terms are unweighted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_nce: f64,
    pub loss_nce_id: f64,
}

/// CSV text of a loss log, header included.
pub fn write_loss_log(records: &[LossRecord]) -> String {
    let mut s = format!("{LOSS_LOG_HEADER}\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration, r.loss_d, r.loss_g, r.loss_nce, r.loss_nce_id
        )
        .unwrap();
    }
    s
}

/// Stacks same-size images into `[N, 1, ny, nx]`.
pub fn image_to_tensor(images: &[&Image2D]) -> Result<Tensor<f32>, TranslateError> {
    let Some(first) = images.first() else {
        return Err(TranslateError::EmptyDataset("input"));
    };
    let (nx, ny) = first.dims();
    let mut data = Vec::with_capacity(images.len() * nx * ny);
    for img in images {
        if img.dims() != (nx, ny) {
            return Err(TranslateError::DimsMismatch {
                expected: [nx, ny],
                found: [img.nx(), img.ny()],
            });
        }
        data.extend_from_slice(img.pixels());
    }
    Ok(Tensor::new(&[images.len(), 1, ny, nx], data)?)
}

/// Sample `n` of a `[N, 1, H, W]` tensor as pixels, row-major.
pub fn tensor_to_image(t: &Tensor<f32>, n: usize) -> Vec<f32> {
    let plane = t.shape()[2] * t.shape()[3];
    t.data()[n * plane..(n + 1) * plane].to_vec()
}

/// Generator, discriminator and projection heads with the config that trained them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub heads: ProjectionHeads<f32>,
    pub config: TranslatorConfig,
    pub iterations_done: usize,
}

impl TrainedModel {
    /// Freshly initialized networks; weights depend only on `config.seed`.
    pub fn init(
        gen_spec: &GeneratorSpec,
        disc_spec: &DiscriminatorSpec,
        config: &TranslatorConfig,
    ) -> Result<Self, TranslateError> {
        config.validate()?;
        let generator = Generator::new(
            gen_spec,
            &mut seed::stream(config.seed, "translate.init.g", 0),
        )?;
        let discriminator = Discriminator::new(
            disc_spec,
            &mut seed::stream(config.seed, "translate.init.d", 0),
        )?;
        let heads = ProjectionHeads::for_generator(
            gen_spec,
            config.head_dim,
            &mut seed::stream(config.seed, "translate.init.h", 0),
        );
        Ok(Self {
            generator,
            discriminator,
            heads,
            config: config.clone(),
            iterations_done: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.meta
            .insert("generator".into(), to_json(&self.generator.spec));
        ck.meta
            .insert("discriminator".into(), to_json(&self.discriminator.spec));
        ck.meta.insert("translator".into(), to_json(&self.config));
        ck.meta
            .insert("iterations_done".into(), self.iterations_done.to_string());
        for (prefix, p) in [
            ("g", &self.generator.params),
            ("d", &self.discriminator.params),
            ("h", &self.heads.params),
        ] {
            for (name, t) in p.names.iter().zip(&p.values) {
                ck.push(format!("{prefix}.{name}"), t);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TranslateError> {
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| TranslateError::Checkpoint(format!("missing meta {k}")))
        };
        let parse_err =
            |k: &str, e: serde_json::Error| TranslateError::Checkpoint(format!("{k}: {e}"));
        let gspec: GeneratorSpec =
            serde_json::from_str(meta("generator")?).map_err(|e| parse_err("generator", e))?;
        let dspec: DiscriminatorSpec = serde_json::from_str(meta("discriminator")?)
            .map_err(|e| parse_err("discriminator", e))?;
        let config: TranslatorConfig =
            serde_json::from_str(meta("translator")?).map_err(|e| parse_err("translator", e))?;
        let iterations_done = meta("iterations_done")?
            .parse()
            .map_err(|_| TranslateError::Checkpoint("bad iterations_done".into()))?;
        let mut model = Self::init(&gspec, &dspec, &config)?;
        let expected = model.to_checkpoint();
        if expected.entries.len() != ck.entries.len() {
            return Err(TranslateError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.entries.len(),
                ck.entries.len()
            )));
        }
        let take = |prefix: &str, names: &[String]| -> Result<Vec<Tensor<f32>>, TranslateError> {
            names
                .iter()
                .map(|n| {
                    let key = format!("{prefix}.{n}");
                    ck.get(&key)
                        .cloned()
                        .ok_or_else(|| TranslateError::Checkpoint(format!("missing tensor {key}")))
                })
                .collect()
        };
        model.generator =
            Generator::from_params(&gspec, take("g", &model.generator.params.names)?)?;
        model.discriminator =
            Discriminator::from_params(&dspec, take("d", &model.discriminator.params.names)?)?;
        let chans: Vec<usize> = gspec
            .nce_layers
            .iter()
            .map(|&l| gspec.layer_channels(l))
            .collect();
        model.heads = ProjectionHeads::from_params(
            &chans,
            config.head_dim,
            take("h", &model.heads.params.names)?,
        )?;
        model.iterations_done = iterations_done;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), TranslateError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, TranslateError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// First 12 hex digits of the SHA-256 of the checkpoint bytes.
    pub fn model_id(&self) -> String {
        let bytes = self
            .to_checkpoint()
            .to_bytes()
            .expect("names are well-formed");
        Sha256::digest(&bytes)
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn check_dataset(images: &[Image2D], what: &'static str) -> Result<(usize, usize), TranslateError> {
    let first = images.first().ok_or(TranslateError::EmptyDataset(what))?;
    let dims = first.dims();
    for img in images {
        if img.dims() != dims {
            return Err(TranslateError::DimsMismatch {
                expected: [dims.0, dims.1],
                found: [img.nx(), img.ny()],
            });
        }
    }
    Ok(dims)
}

fn random_batch(
    images: &[Image2D],
    batch: usize,
    crop: (usize, usize),
    rng: &mut impl Rng,
) -> Result<Tensor<f32>, TranslateError> {
    let (cw, ch) = crop;
    let mut data = Vec::with_capacity(batch * cw * ch);
    for _ in 0..batch {
        let img = &images[rng.random_range(0..images.len())];
        let (nx, ny) = img.dims();
        let x0 = rng.random_range(0..=nx - cw);
        let y0 = rng.random_range(0..=ny - ch);
        for y in y0..y0 + ch {
            data.extend_from_slice(&img.pixels()[y * nx + x0..y * nx + x0 + cw]);
        }
    }
    Ok(Tensor::new(&[batch, 1, ch, cw], data)?)
}

/// Unweighted multilayer PatchNCE between source features and the encoding of the
/// translated image. Source embeddings are treated as constants.
#[allow(clippy::too_many_arguments)]
fn nce_term(
    tape: &mut Tape<f32>,
    model: &TrainedModel,
    gv: &[Var],
    hv: &[Var],
    src: &GenOutput,
    translated: Var,
    rng: &mut impl Rng,
) -> Result<Var, TranslateError> {
    let q_feats = model.generator.encode_features(tape, gv, translated)?;
    let mut total: Option<Var> = None;
    for (l, (&sf, &qf)) in src.features.iter().zip(&q_feats).enumerate() {
        let available = tape.shape(sf)[2] * tape.shape(sf)[3];
        let n = model.config.n_patches.min(available);
        let mut s = sample_patches(tape, hv, &model.heads, l, sf, None, n, rng)?;
        s.embeddings = tape.detach(s.embeddings);
        let q = sample_patches(tape, hv, &model.heads, l, qf, Some(&s.indices), n, rng)?;
        let loss = patchnce_loss(tape, &s, &q, model.config.tau)?;
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    Ok(total.expect("at least one NCE layer"))
}

fn grads<'a>(tape: &'a Tape<f32>, vars: &[Var]) -> Vec<Option<&'a Tensor<f32>>> {
    vars.iter().map(|v| tape.grad(*v)).collect()
}

struct Optimizers {
    d: Adam<f32>,
    g: Adam<f32>,
    h: Adam<f32>,
}

fn train_step(
    model: &mut TrainedModel,
    opt: &mut Optimizers,
    sim: &[Image2D],
    real: &[Image2D],
    crop: (usize, usize),
    iteration: usize,
) -> Result<LossRecord, TranslateError> {
    let cfg = model.config.clone();
    let mut rng = seed::stream(cfg.seed, "translate.train", iteration as u64);
    let sim_b = random_batch(sim, cfg.batch_size, crop, &mut rng)?;
    let real_b = random_batch(real, cfg.batch_size, crop, &mut rng)?;

    let mut tape = Tape::<f32>::new();
    let gv = model.generator.params.bind(&mut tape, true);
    let dv = model.discriminator.params.bind(&mut tape, true);
    let hv = model.heads.params.bind(&mut tape, true);
    let sim_x = tape.constant(sim_b);
    let real_x = tape.constant(real_b);
    let fake = model.generator.forward(&mut tape, &gv, sim_x)?;

    // discriminator on (real, detached fake)
    let fake_det = tape.detach(fake.image);
    let d_real = model.discriminator.forward(&mut tape, &dv, real_x)?;
    let d_fake = model.discriminator.forward(&mut tape, &dv, fake_det)?;
    let loss_d = lsgan_d_loss(&mut tape, d_real, d_fake)?;
    tape.backward(loss_d)?;
    opt.d
        .step(&mut model.discriminator.params.values, &grads(&tape, &dv))?;

    // generator + heads against the updated discriminator
    let dv_new = model.discriminator.params.bind(&mut tape, false);
    let d_fake_new = model
        .discriminator
        .forward(&mut tape, &dv_new, fake.image)?;
    let loss_g = lsgan_g_loss(&mut tape, d_fake_new);
    let mut total = loss_g;
    let mut nce_value = 0.0;
    let mut nce_id_value = 0.0;
    if cfg.lambda_nce > 0.0 {
        let nce = nce_term(&mut tape, model, &gv, &hv, &fake, fake.image, &mut rng)?;
        nce_value = f64::from(tape.value(nce).item());
        let w = tape.scale(nce, cfg.lambda_nce);
        total = tape.add(total, w)?;
    }
    if cfg.lambda_nce_identity > 0.0 {
        let idt = model.generator.forward(&mut tape, &gv, real_x)?;
        let nce = nce_term(&mut tape, model, &gv, &hv, &idt, idt.image, &mut rng)?;
        nce_id_value = f64::from(tape.value(nce).item());
        let w = tape.scale(nce, cfg.lambda_nce_identity);
        total = tape.add(total, w)?;
    }
    tape.backward(total)?;
    opt.g
        .step(&mut model.generator.params.values, &grads(&tape, &gv))?;
    opt.h
        .step(&mut model.heads.params.values, &grads(&tape, &hv))?;

    Ok(LossRecord {
        iteration,
        loss_d: f64::from(tape.value(loss_d).item()),
        loss_g: f64::from(tape.value(loss_g).item()),
        loss_nce: nce_value,
        loss_nce_id: nce_id_value,
    })
}

/// Trains from freshly initialized networks. See [`train_cut_with`].
pub fn train_cut(
    sim: &[Image2D],
    real: &[Image2D],
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    config: &TranslatorConfig,
) -> Result<(TrainedModel, Vec<LossRecord>), TranslateError> {
    train_cut_with(sim, real, gen_spec, disc_spec, config, |_| {})
}

/// Alternating LSGAN discriminator / generator updates with PatchNCE content
/// losses. `on_iteration` sees each record as it is produced.
///
/// On a non-finite value the run stops with [`TranslateError::Numeric`], carrying
/// the model as it was before the failing iteration.
pub fn train_cut_with(
    sim: &[Image2D],
    real: &[Image2D],
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    config: &TranslatorConfig,
    mut on_iteration: impl FnMut(&LossRecord),
) -> Result<(TrainedModel, Vec<LossRecord>), TranslateError> {
    let mut model = TrainedModel::init(gen_spec, disc_spec, config)?;
    let dims = check_dataset(sim, "sim")?;
    let real_dims = check_dataset(real, "real")?;
    if dims != real_dims {
        return Err(TranslateError::DimsMismatch {
            expected: [dims.0, dims.1],
            found: [real_dims.0, real_dims.1],
        });
    }
    let crop = if config.crop_size == 0 {
        dims
    } else {
        if config.crop_size > dims.0.min(dims.1) {
            return Err(invalid(
                "crop_size",
                format!("{} exceeds image dims {dims:?}", config.crop_size),
            ));
        }
        (config.crop_size, config.crop_size)
    };
    let m = 1 << disc_spec.n_layers;
    if crop.0 % m != 0 || crop.1 % m != 0 {
        return Err(invalid(
            "crop_size",
            format!("training extent {crop:?} must be a multiple of {m} for the discriminator"),
        ));
    }
    let mut opt = Optimizers {
        d: Adam::new(config.lr).with_betas(config.beta1, config.beta2),
        g: Adam::new(config.lr).with_betas(config.beta1, config.beta2),
        h: Adam::new(config.lr).with_betas(config.beta1, config.beta2),
    };
    let mut log = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let snapshot = model.clone();
        let step = train_step(&mut model, &mut opt, sim, real, crop, it);
        let healthy = |r: &LossRecord| {
            [r.loss_d, r.loss_g, r.loss_nce, r.loss_nce_id]
                .iter()
                .all(|v| v.is_finite())
        };
        match step {
            Ok(rec)
                if healthy(&rec)
                    && model.generator.params.is_finite()
                    && model.discriminator.params.is_finite()
                    && model.heads.params.is_finite() =>
            {
                model.iterations_done = it + 1;
                on_iteration(&rec);
                log.push(rec);
            }
            Ok(_) | Err(TranslateError::Tensor(TensorError::Numeric(_))) => {
                return Err(TranslateError::Numeric {
                    iteration: it,
                    last_good: Box::new(snapshot),
                    log,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((model, log))
}

/// Deterministic inference; each output carries `sim2real:<model-id>` provenance.
pub fn translate_batch(
    model: &TrainedModel,
    images: &[Image2D],
) -> Result<Vec<Image2D>, TranslateError> {
    let id = model.model_id();
    let outputs = par::map_slice(images, |img| {
        if let Some(p) = img
            .pixels()
            .iter()
            .find(|p| !(-1e-6..=1.0 + 1e-6).contains(*p))
        {
            return Err(invalid("input", format!("pixel {p} outside [0, 1]")));
        }
        let mut tape = Tape::<f32>::new();
        let gv = model.generator.params.bind(&mut tape, false);
        let x = tape.constant(image_to_tensor(&[img])?);
        let out = model.generator.forward(&mut tape, &gv, x)?;
        tape.status()?;
        let pixels = tensor_to_image(tape.value(out.image), 0);
        let (nx, ny) = img.dims();
        Ok(img
            .with_pixels(nx, ny, pixels)
            .map_err(|e| invalid("input", e.to_string()))?
            .tag("translated_by", format!("sim2real:{id}"))
            .record(format!("sim2real:{id}")))
    });
    outputs.into_iter().collect()
}
