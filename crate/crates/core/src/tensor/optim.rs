use super::{shape_err, Real, Tensor, TensorError};

/// Adam with bias correction. Defaults: β1 = 0.5, β2 = 0.999, eps = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: T::of(lr),
            beta1: T::of(0.5),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = T::of(beta1);
        self.beta2 = T::of(beta2);
        self
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One update of `params` in place. A missing gradient counts as zero.
    /// The parameter list must keep the same order and shapes across calls.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<&Tensor<T>>],
    ) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(shape_err(
                "adam_step",
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(shape_err(
                "adam_step",
                format!("state for {} params, got {}", self.m.len(), params.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let bad = self.m[i].len() != p.numel() || g.is_some_and(|g| g.shape() != p.shape());
            if bad {
                return Err(shape_err(
                    "adam_step",
                    format!("param {i} shape {:?}", p.shape()),
                ));
            }
        }
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let zeros;
            let g = match g {
                Some(g) => g.data(),
                None => {
                    zeros = vec![T::zero(); p.numel()];
                    &zeros
                }
            };
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (one - self.beta1) * gi;
                *vi = self.beta2 * *vi + (one - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *x = *x - self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
