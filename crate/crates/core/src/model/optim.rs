use crate::model::config::TrainConfig;
use crate::model::params::ModelParams;
use crate::tensor::Scalar;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: ModelParams<T>,
    v: ModelParams<T>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ModelParams<T>, cfg: &TrainConfig) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.eps);
        let g = grads.tensors();
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(g);
        for (((p, m), v), (_, g)) in tensors {
            let cells = p
                .as_mut_slice()
                .iter_mut()
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
                .zip(g.as_slice());
            for (((p, m), v), &g) in cells {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` only measures.
pub fn clip_global_norm<T: Scalar>(grads: &mut ModelParams<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}
