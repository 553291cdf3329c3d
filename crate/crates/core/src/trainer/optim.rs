//! Plain SGD with linear learning-rate decay and global-norm clipping.

use super::loss::Gradients;
use super::weights::TrainableWeights;
use crate::embedding::{EmbeddingTable, Space};
use crate::error::{Error, Result};

/// `lr0 · (1 − epoch / total_epochs)`, reaching 0 at the end of training.
pub fn lr_schedule(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::InvalidArgument("total_epochs must be positive".into()));
    }
    if epoch >= total_epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} out of range for {total_epochs} epochs"
        )));
    }
    Ok(lr0 * (1.0 - epoch as f64 / total_epochs as f64))
}

/// Which parameter groups an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamMask {
    pub w_q: bool,
    pub w_t: bool,
    pub w_p: bool,
    pub queries: bool,
    pub questions: bool,
    pub tags: bool,
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask {
        w_q: true,
        w_t: true,
        w_p: true,
        queries: true,
        questions: true,
        tags: true,
    };

    pub fn space(&self, space: Space) -> bool {
        match space {
            Space::Query => self.queries,
            Space::Question => self.questions,
            Space::Tag => self.tags,
        }
    }

    pub fn without_embeddings(self) -> Self {
        ParamMask {
            queries: false,
            questions: false,
            tags: false,
            ..self
        }
    }
}

/// Drops every gradient component the mask excludes.
pub fn apply_mask(grads: &mut Gradients, mask: ParamMask) {
    if !mask.w_q {
        grads.w_q.fill(0.0);
    }
    if !mask.w_t {
        grads.w_t.fill(0.0);
    }
    if !mask.w_p {
        grads.w_p.fill(0.0);
    }
    grads.rows.retain(|(space, _), _| mask.space(*space));
}

pub fn grad_norm(grads: &Gradients) -> f64 {
    grads
        .w_q
        .iter()
        .chain(&grads.w_t)
        .chain(&grads.w_p)
        .chain(grads.rows.values().flatten())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales so the global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// `θ ← θ − lr·∇θ` for every parameter present in `grads`.
pub fn sgd_step(table: &mut EmbeddingTable, weights: &mut TrainableWeights, grads: &Gradients, lr: f64) -> Result<()> {
    check_finite("W_Q", &grads.w_q)?;
    check_finite("W_t", &grads.w_t)?;
    check_finite("W_p", &grads.w_p)?;
    for ((space, pos), g) in &grads.rows {
        if g.iter().any(|v| !v.is_finite()) {
            let id = &table.set(*space).ids()[*pos];
            return Err(Error::NonFinite(format!("{space} `{id}`")));
        }
    }

    for (w, g) in [
        (&mut weights.w_q, &grads.w_q),
        (&mut weights.w_t, &grads.w_t),
        (&mut weights.w_p, &grads.w_p),
    ] {
        for (wi, gi) in w.values_mut().iter_mut().zip(g) {
            *wi -= lr * gi;
        }
    }
    for ((space, pos), g) in &grads.rows {
        for (v, gi) in table.row_mut(*space, *pos).iter_mut().zip(g) {
            *v -= lr * gi;
        }
    }
    Ok(())
}

fn check_finite(name: &str, g: &[f64]) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}
