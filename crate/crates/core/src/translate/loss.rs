use rand::Rng;

use super::{ProjectionHeads, TranslateError};
use crate::tensor::{Real, Tape, Var};

/// Projected, unit-norm feature vectors at a set of spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingSet {
    /// Index of the NCE layer (position in `nce_layers`).
    pub layer: usize,
    /// Flat spatial positions `y·W + x`, shared by every sample in the batch.
    pub indices: Vec<usize>,
    /// `[N·P, d]`; row `n·P + p` is sample `n` at `indices[p]`.
    pub embeddings: Var,
}

impl PatchEmbeddingSet {
    pub fn n_patches(&self) -> usize {
        self.indices.len()
    }
}

/// Embeds `features: [N, C, H, W]` at `indices`, or at `n_patches` distinct positions
/// drawn from `rng` when `indices` is `None`.
pub fn sample_patches<T: Real>(
    tape: &mut Tape<T>,
    params: &[Var],
    heads: &ProjectionHeads<T>,
    layer: usize,
    features: Var,
    indices: Option<&[usize]>,
    n_patches: usize,
    rng: &mut impl Rng,
) -> Result<PatchEmbeddingSet, TranslateError> {
    let s = tape.shape(features).to_vec();
    let available = s.get(2).copied().unwrap_or(0) * s.get(3).copied().unwrap_or(0);
    let indices = match indices {
        Some(ix) => ix.to_vec(),
        None => {
            if n_patches > available {
                return Err(TranslateError::NotEnoughPositions {
                    requested: n_patches,
                    available,
                });
            }
            rand::seq::index::sample(rng, available, n_patches).into_vec()
        }
    };
    if layer >= heads.len() {
        return Err(TranslateError::MismatchedSets(format!(
            "no projection head {layer}"
        )));
    }
    let rows = tape.gather_positions(features, &indices)?;
    let projected = heads.project(tape, params, layer, rows)?;
    let embeddings = tape.l2_normalize_rows(projected)?;
    Ok(PatchEmbeddingSet {
        layer,
        indices,
        embeddings,
    })
}

/// Mean over patches `i` of `−log softmax_j(⟨tr_i, src_j⟩ / τ)[i]`, with negatives
/// drawn from the same sample.
pub fn patchnce_loss<T: Real>(
    tape: &mut Tape<T>,
    src: &PatchEmbeddingSet,
    tr: &PatchEmbeddingSet,
    tau: f64,
) -> Result<Var, TranslateError> {
    if src.layer != tr.layer {
        return Err(TranslateError::MismatchedSets(format!(
            "layers {} vs {}",
            src.layer, tr.layer
        )));
    }
    if src.indices != tr.indices {
        return Err(TranslateError::MismatchedSets(
            "spatial indices differ".into(),
        ));
    }
    if tape.shape(src.embeddings) != tape.shape(tr.embeddings) {
        return Err(TranslateError::MismatchedSets(format!(
            "embedding shapes {:?} vs {:?}",
            tape.shape(src.embeddings),
            tape.shape(tr.embeddings)
        )));
    }
    if !(tau > 0.0) {
        return Err(TranslateError::InvalidSpec {
            field: "tau",
            reason: format!("must be > 0, got {tau}"),
        });
    }
    let sim = tape.group_matmul_nt(tr.embeddings, src.embeddings, src.n_patches())?;
    let logits = tape.scale(sim, 1.0 / tau);
    Ok(tape.diag_cross_entropy(logits)?)
}

/// `½·mean((D(real) − 1)²) + ½·mean(D(fake)²)`.
pub fn lsgan_d_loss<T: Real>(
    tape: &mut Tape<T>,
    real: Var,
    fake: Var,
) -> Result<Var, TranslateError> {
    if tape.shape(real) != tape.shape(fake) {
        return Err(TranslateError::MismatchedSets(format!(
            "score maps {:?} vs {:?}",
            tape.shape(real),
            tape.shape(fake)
        )));
    }
    let r = tape.add_scalar(real, -1.0);
    let r = tape.square(r);
    let r = tape.mean(r);
    let f = tape.square(fake);
    let f = tape.mean(f);
    let sum = tape.add(r, f)?;
    Ok(tape.scale(sum, 0.5))
}

/// `mean((D(fake) − 1)²)`.
pub fn lsgan_g_loss<T: Real>(tape: &mut Tape<T>, fake: Var) -> Var {
    let f = tape.add_scalar(fake, -1.0);
    let f = tape.square(f);
    tape.mean(f)
}

/// `(loss_D, loss_G)` for the same pair of score maps.
pub fn lsgan_losses<T: Real>(
    tape: &mut Tape<T>,
    disc_real: Var,
    disc_fake: Var,
) -> Result<(Var, Var), TranslateError> {
    let d = lsgan_d_loss(tape, disc_real, disc_fake)?;
    Ok((d, lsgan_g_loss(tape, disc_fake)))
}
