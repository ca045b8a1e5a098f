//! Building blocks with hand-written backward passes.
//!
//! Every block's parameter struct doubles as its gradient accumulator: the
//! backward functions add into a value of the same type.

use crate::rng::Rng;
use crate::tensor::{gemm, softmax_in_place, Matrix, Scalar};

/// Uniform access to every trainable tensor, in a fixed order.
pub trait Params<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Params<T> for Matrix<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        out.push((prefix.to_owned(), self));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        out.push(self);
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        for p in self.iter_mut() {
            p.visit_mut(out);
        }
    }
}

macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: Scalar> Params<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
                $( self.$field.visit(&join(prefix, stringify!($field)), out); )*
            }

            fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
                $( self.$field.visit_mut(out); )*
            }
        }
    };
}
pub(crate) use impl_params;

/// Dropout state for one forward pass; `None` means evaluation mode.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut Rng>,
}

impl DropoutCtx<'_> {
    pub fn eval() -> DropoutCtx<'static> {
        DropoutCtx { rate: 0.0, rng: None }
    }

    fn active(&self) -> bool {
        self.rate > 0.0 && self.rng.is_some()
    }

    /// Applies inverted dropout in place and returns the scaled mask.
    pub fn apply<T: Scalar>(&mut self, x: &mut Matrix<T>) -> Option<Vec<T>> {
        if !self.active() {
            return None;
        }
        let rng = self.rng.as_mut().expect("active");
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.uniform() < self.rate { T::zero() } else { keep })
            .collect();
        for (v, &m) in x.as_mut_slice().iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    }
}

pub fn dropout_backward<T: Scalar>(dx: &mut Matrix<T>, mask: &Option<Vec<T>>) {
    if let Some(mask) = mask {
        for (v, &m) in dx.as_mut_slice().iter_mut().zip(mask) {
            *v *= m;
        }
    }
}

/// `y = x W^T + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}
impl_params!(Linear { weight, bias });

impl<T: Scalar> Linear<T> {
    /// Xavier-uniform weights, zero bias.
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Linear {
            weight: Matrix::from_fn(output, input, |_, _| T::of((2.0 * rng.uniform() - 1.0) * limit)),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = Matrix::zeros(x.rows(), self.weight.rows());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(self.bias.as_slice());
        }
        gemm(T::one(), x.view(), self.weight.view().t(), T::one(), y.view_mut());
        y
    }

    /// Accumulates weight gradients and returns `dx`.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, grad: &mut Linear<T>) -> Matrix<T> {
        gemm(T::one(), dy.view().t(), x.view(), T::one(), grad.weight.view_mut());
        let gb = grad.bias.as_mut_slice();
        for r in 0..dy.rows() {
            for (g, &d) in gb.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = Matrix::zeros(dy.rows(), self.weight.cols());
        gemm(T::one(), dy.view(), self.weight.view(), T::zero(), dx.view_mut());
        dx
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Matrix<T>,
    pub beta: Matrix<T>,
}
impl_params!(LayerNorm { gamma, beta });

pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Matrix::filled(1, dim, T::one()),
            beta: Matrix::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, LayerNormCache<T>) {
        let n = T::of(x.cols() as f64);
        let mut xhat = x.clone();
        let mut y = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        let (g, b) = (self.gamma.as_slice(), self.beta.as_slice());
        for r in 0..x.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + T::of(LN_EPS)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
            let out = y.row_mut(r);
            for c in 0..out.len() {
                out[c] = g[c] * row[c] + b[c];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Matrix<T>, grad: &mut LayerNorm<T>) -> Matrix<T> {
        let cols = dy.cols();
        let n = T::of(cols as f64);
        let g = self.gamma.as_slice();
        let mut dx = Matrix::zeros(dy.rows(), cols);
        let mut dxhat = vec![T::zero(); cols];
        for r in 0..dy.rows() {
            let (dyr, xh) = (dy.row(r), cache.xhat.row(r));
            {
                let gg = grad.gamma.as_mut_slice();
                for c in 0..cols {
                    gg[c] += dyr[c] * xh[c];
                }
            }
            {
                let gb = grad.beta.as_mut_slice();
                for c in 0..cols {
                    gb[c] += dyr[c];
                }
            }
            for c in 0..cols {
                dxhat[c] = dyr[c] * g[c];
            }
            let mean_d = dxhat.iter().copied().sum::<T>() / n;
            let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
            let inv = cache.inv_std[r];
            let out = dx.row_mut(r);
            for c in 0..cols {
                out[c] = inv * (dxhat[c] - mean_d - xh[c] * mean_dx);
            }
        }
        dx
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}
impl_params!(Attention {
    query,
    key,
    value,
    output
});

pub struct AttentionCache<T> {
    xq: Matrix<T>,
    xkv: Option<Matrix<T>>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Vec<Matrix<T>>,
    ctx: Matrix<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        Attention {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
        }
    }

    /// `xkv = None` means self-attention over `xq`. With `causal`, query `i`
    /// only sees keys `j <= i`.
    pub fn forward(
        &self,
        xq: &Matrix<T>,
        xkv: Option<&Matrix<T>>,
        heads: usize,
        causal: bool,
    ) -> (Matrix<T>, AttentionCache<T>) {
        let src = xkv.unwrap_or(xq);
        let q = self.query.forward(xq);
        let k = self.key.forward(src);
        let v = self.value.forward(src);
        let (n, m, d) = (q.rows(), k.rows(), q.cols());
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut ctx = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut s = Matrix::zeros(n, m);
            gemm(
                scale,
                q.col_block(h * dh, dh),
                k.col_block(h * dh, dh).t(),
                T::zero(),
                s.view_mut(),
            );
            for i in 0..n {
                let row = s.row_mut(i);
                if causal {
                    for x in row.iter_mut().skip(i + 1) {
                        *x = T::neg_infinity();
                    }
                }
                softmax_in_place(row);
            }
            gemm(
                T::one(),
                s.view(),
                v.col_block(h * dh, dh),
                T::zero(),
                ctx.col_block_mut(h * dh, dh),
            );
            probs.push(s);
        }
        let out = self.output.forward(&ctx);
        let cache = AttentionCache {
            xq: xq.clone(),
            xkv: xkv.cloned(),
            q,
            k,
            v,
            probs,
            ctx,
        };
        (out, cache)
    }

    /// Returns `(dxq, dxkv)`; for self-attention `dxkv` is already folded
    /// into `dxq` and the second value is `None`.
    pub fn backward(
        &self,
        cache: &AttentionCache<T>,
        dout: &Matrix<T>,
        heads: usize,
        grad: &mut Attention<T>,
    ) -> (Matrix<T>, Option<Matrix<T>>) {
        let dctx = self.output.backward(&cache.ctx, dout, &mut grad.output);
        let (n, m, d) = (cache.q.rows(), cache.k.rows(), cache.q.cols());
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(m, d);
        let mut dv = Matrix::zeros(m, d);
        let mut dp = Matrix::zeros(n, m);
        for h in 0..heads {
            let p = &cache.probs[h];
            // dV_h = P^T dctx_h
            gemm(
                T::one(),
                p.view().t(),
                dctx.col_block(h * dh, dh),
                T::zero(),
                dv.col_block_mut(h * dh, dh),
            );
            // dP = dctx_h V_h^T
            gemm(
                T::one(),
                dctx.col_block(h * dh, dh),
                cache.v.col_block(h * dh, dh).t(),
                T::zero(),
                dp.view_mut(),
            );
            // softmax backward, folded with the score scale
            for i in 0..n {
                let (pr, dr) = (p.row(i), dp.row_mut(i));
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..m {
                    dr[j] = pr[j] * (dr[j] - dot) * scale;
                }
            }
            gemm(
                T::one(),
                dp.view(),
                cache.k.col_block(h * dh, dh),
                T::zero(),
                dq.col_block_mut(h * dh, dh),
            );
            gemm(
                T::one(),
                dp.view().t(),
                cache.q.col_block(h * dh, dh),
                T::zero(),
                dk.col_block_mut(h * dh, dh),
            );
        }
        let mut dxq = self.query.backward(&cache.xq, &dq, &mut grad.query);
        let src = cache.xkv.as_ref().unwrap_or(&cache.xq);
        let mut dsrc = self.key.backward(src, &dk, &mut grad.key);
        dsrc.add_assign(&self.value.backward(src, &dv, &mut grad.value));
        if cache.xkv.is_some() {
            (dxq, Some(dsrc))
        } else {
            dxq.add_assign(&dsrc);
            (dxq, None)
        }
    }
}

/// Position-wise `relu(x W1^T + b1) W2^T + b2`, dropout on the activations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub up: Linear<T>,
    pub down: Linear<T>,
}
impl_params!(FeedForward { up, down });

pub struct FeedForwardCache<T> {
    x: Matrix<T>,
    pre: Matrix<T>,
    hidden: Matrix<T>,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        FeedForward {
            up: Linear::new(dim, hidden, rng),
            down: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &Matrix<T>, drop: &mut DropoutCtx) -> (Matrix<T>, FeedForwardCache<T>) {
        let pre = self.up.forward(x);
        let mut hidden = pre.clone();
        hidden.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
        let mask = drop.apply(&mut hidden);
        let out = self.down.forward(&hidden);
        let cache = FeedForwardCache {
            x: x.clone(),
            pre,
            hidden,
            mask,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &FeedForwardCache<T>, dout: &Matrix<T>, grad: &mut FeedForward<T>) -> Matrix<T> {
        let mut dh = self.down.backward(&cache.hidden, dout, &mut grad.down);
        dropout_backward(&mut dh, &cache.mask);
        for (g, &p) in dh.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
        self.up.backward(&cache.x, &dh, &mut grad.up)
    }
}
