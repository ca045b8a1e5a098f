//! Connectionist Temporal Classification over coarse label lattices.
//!
//! Lattices hold per-frame log-probabilities over `C = L + 1` classes; the
//! blank is always the last class (`C - 1`). The forward-backward passes run
//! in log space with [`LOG_ZERO`] as the log of zero, so no arithmetic ever
//! touches IEEE infinities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{log_softmax_in_place, Matrix, Scalar};

/// Log of zero probability.
pub const LOG_ZERO: f64 = -1e30;

/// Anything at or below this is treated as log-zero.
const LOG_ZERO_CUTOFF: f64 = -5e29;

/// Largest number of paths [`brute_force_nll`] will enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e6;

#[inline]
fn log_add<T: Scalar>(a: T, b: T) -> T {
    let cutoff = T::of(LOG_ZERO_CUTOFF);
    if a <= cutoff {
        return if b <= cutoff { T::of(LOG_ZERO) } else { b };
    }
    if b <= cutoff {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `T x C` per-frame log-probabilities; blank is class `C - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbLattice<T: Scalar = f64> {
    logp: Matrix<T>,
}

impl<T: Scalar> LogProbLattice<T> {
    pub fn new(logp: Matrix<T>) -> Result<Self> {
        if logp.rows() == 0 || logp.cols() == 0 {
            return Err(Error::EmptyLattice);
        }
        Ok(LogProbLattice { logp })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("lattice rows differ in length".into()));
        }
        Self::new(Matrix::from_vec(
            rows.len(),
            cols,
            rows.iter().flatten().copied().collect(),
        ))
    }

    /// Log-softmax of raw scores, row by row.
    pub fn from_logits(mut logits: Matrix<T>) -> Result<Self> {
        for r in 0..logits.rows() {
            log_softmax_in_place(logits.row_mut(r));
        }
        Self::new(logits)
    }

    /// Takes plain probabilities; zeros become [`LOG_ZERO`].
    pub fn from_probs(probs: &[Vec<T>]) -> Result<Self> {
        let rows: Vec<Vec<T>> = probs
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&p| if p > T::zero() { p.ln() } else { T::of(LOG_ZERO) })
                    .collect()
            })
            .collect();
        Self::from_rows(&rows)
    }

    pub fn frames(&self) -> usize {
        self.logp.rows()
    }

    pub fn classes(&self) -> usize {
        self.logp.cols()
    }

    pub fn blank(&self) -> usize {
        self.logp.cols() - 1
    }

    pub fn get(&self, t: usize, c: usize) -> T {
        self.logp.get(t, c)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.logp
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix<T> {
        &mut self.logp
    }

    /// Largest `|logsumexp(row)|` over all frames.
    pub fn normalization_error(&self) -> f64 {
        (0..self.frames())
            .map(|t| crate::tensor::log_sum_exp(self.logp.row(t)).as_f64().abs())
            .fold(0.0, f64::max)
    }

    fn check_labels(&self, z: &[usize]) -> Result<()> {
        let blank = self.blank();
        for (i, &c) in z.iter().enumerate() {
            if c >= blank {
                return Err(Error::IdOutOfRange {
                    id: c,
                    bound: blank,
                    index: Some(i),
                });
            }
        }
        Ok(())
    }
}

/// Merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &a in path {
        if Some(a) != prev && a != blank {
            out.push(a);
        }
        prev = Some(a);
    }
    out
}

/// Minimum frame count for a label sequence: one per label plus a blank
/// between each adjacent repeat.
pub fn min_frames(z: &[usize]) -> usize {
    z.len() + z.windows(2).filter(|w| w[0] == w[1]).count()
}

pub fn is_feasible(frames: usize, z: &[usize]) -> bool {
    frames >= min_frames(z)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtcLoss<T> {
    /// Negative log-likelihood in nats; `+inf` when infeasible.
    pub nll: T,
    pub feasible: bool,
}

struct Extended {
    labels: Vec<usize>,
}

impl Extended {
    fn new(z: &[usize], blank: usize) -> Self {
        let mut labels = Vec::with_capacity(2 * z.len() + 1);
        labels.push(blank);
        for &c in z {
            labels.push(c);
            labels.push(blank);
        }
        Extended { labels }
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    /// Whether state `s` can be entered from `s - 2`.
    fn skip_allowed(&self, s: usize, blank: usize) -> bool {
        s >= 2 && self.labels[s] != blank && self.labels[s] != self.labels[s - 2]
    }
}

/// Forward variables, `T x S`, including the emission at each frame.
fn forward<T: Scalar>(lat: &LogProbLattice<T>, ext: &Extended) -> Vec<T> {
    let (frames, s_len, blank) = (lat.frames(), ext.len(), lat.blank());
    let zero = T::of(LOG_ZERO);
    let mut alpha = vec![zero; frames * s_len];
    alpha[0] = lat.get(0, blank);
    if s_len > 1 {
        alpha[1] = lat.get(0, ext.labels[1]);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let cur = &mut cur[..s_len];
        // states beyond 2t + 1 are unreachable at frame t
        let reach = (2 * t + 2).min(s_len);
        for s in 0..reach {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if ext.skip_allowed(s, blank) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc <= T::of(LOG_ZERO_CUTOFF) {
                zero
            } else {
                acc + lat.get(t, ext.labels[s])
            };
        }
    }
    alpha
}

/// Backward variables, `T x S`, excluding the emission at each frame.
fn backward<T: Scalar>(lat: &LogProbLattice<T>, ext: &Extended) -> Vec<T> {
    let (frames, s_len, blank) = (lat.frames(), ext.len(), lat.blank());
    let zero = T::of(LOG_ZERO);
    let mut beta = vec![zero; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = T::zero();
    if s_len > 1 {
        beta[last + s_len - 2] = T::zero();
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        for s in 0..s_len {
            let step = |s2: usize| next[s2] + lat.get(t + 1, ext.labels[s2]);
            let mut acc = if next[s] <= T::of(LOG_ZERO_CUTOFF) {
                zero
            } else {
                step(s)
            };
            if s + 1 < s_len && next[s + 1] > T::of(LOG_ZERO_CUTOFF) {
                acc = log_add(acc, step(s + 1));
            }
            if s + 2 < s_len && ext.skip_allowed(s + 2, blank) && next[s + 2] > T::of(LOG_ZERO_CUTOFF) {
                acc = log_add(acc, step(s + 2));
            }
            cur[s] = acc;
        }
    }
    beta
}

fn total_log_likelihood<T: Scalar>(alpha: &[T], frames: usize, s_len: usize) -> T {
    let last = &alpha[(frames - 1) * s_len..];
    if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    }
}

/// `-log sum_{A in Gamma(z)} prod_t p(a_t | t)` by the forward recursion.
pub fn ctc_neg_log_likelihood<T: Scalar>(lat: &LogProbLattice<T>, z: &[usize]) -> Result<CtcLoss<T>> {
    lat.check_labels(z)?;
    if !is_feasible(lat.frames(), z) {
        return Ok(CtcLoss {
            nll: T::infinity(),
            feasible: false,
        });
    }
    let ext = Extended::new(z, lat.blank());
    let alpha = forward(lat, &ext);
    Ok(CtcLoss {
        nll: -total_log_likelihood(&alpha, lat.frames(), ext.len()),
        feasible: true,
    })
}

/// Loss and `d loss / d logp` (a `T x C` matrix).
///
/// Each entry is minus the posterior occupancy of class `c` at frame `t`,
/// so every row sums to `-1`.
pub fn ctc_grad<T: Scalar>(lat: &LogProbLattice<T>, z: &[usize]) -> Result<(T, Matrix<T>)> {
    lat.check_labels(z)?;
    if !is_feasible(lat.frames(), z) {
        return Err(Error::Infeasible {
            frames: lat.frames(),
            required: min_frames(z),
        });
    }
    let ext = Extended::new(z, lat.blank());
    let (frames, s_len) = (lat.frames(), ext.len());
    let alpha = forward(lat, &ext);
    let beta = backward(lat, &ext);
    let log_z = total_log_likelihood(&alpha, frames, s_len);
    let mut grad = Matrix::zeros(frames, lat.classes());
    let cutoff = T::of(LOG_ZERO_CUTOFF);
    for t in 0..frames {
        let row = grad.row_mut(t);
        for s in 0..s_len {
            let (a, b) = (alpha[t * s_len + s], beta[t * s_len + s]);
            if a <= cutoff || b <= cutoff {
                continue;
            }
            row[ext.labels[s]] -= (a + b - log_z).exp();
        }
    }
    Ok((-log_z, grad))
}

/// Loss, per-frame label posteriors and greedy path of one lattice/label pair.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CtcInspection {
    pub frames: usize,
    pub classes: usize,
    pub blank: usize,
    pub labels: Vec<usize>,
    /// `null` when infeasible.
    pub nll: Option<f64>,
    pub feasible: bool,
    pub min_frames: usize,
    /// Occupancy of each class at each frame; `null` when infeasible.
    pub posteriors: Option<Vec<Vec<f64>>>,
    pub greedy: Vec<usize>,
}

pub fn inspect<T: Scalar>(lat: &LogProbLattice<T>, z: &[usize]) -> Result<CtcInspection> {
    lat.check_labels(z)?;
    let feasible = is_feasible(lat.frames(), z);
    let (nll, posteriors) = if feasible {
        let (nll, grad) = ctc_grad(lat, z)?;
        let post = (0..grad.rows())
            .map(|t| grad.row(t).iter().map(|g| 0.0 - g.as_f64()).collect())
            .collect();
        (Some(nll.as_f64()), Some(post))
    } else {
        (None, None)
    };
    Ok(CtcInspection {
        frames: lat.frames(),
        classes: lat.classes(),
        blank: lat.blank(),
        labels: z.to_vec(),
        nll,
        feasible,
        min_frames: min_frames(z),
        posteriors,
        greedy: greedy_ctc_decode(lat),
    })
}

/// Exact `-log` sum over all `C^T` paths whose collapse equals `z`.
///
/// Test oracle; refuses lattices with more than [`ENUMERATION_LIMIT`] paths.
pub fn brute_force_nll<T: Scalar>(lat: &LogProbLattice<T>, z: &[usize]) -> Result<f64> {
    let (frames, classes) = (lat.frames(), lat.classes());
    let paths = (classes as f64).powi(frames as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            paths,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut path = vec![0usize; frames];
    let mut scores = Vec::new();
    loop {
        if collapse(&path, lat.blank()) == z {
            scores.push(
                path.iter()
                    .enumerate()
                    .map(|(t, &c)| lat.get(t, c).as_f64())
                    .sum::<f64>(),
            );
        }
        // odometer increment
        let mut t = frames;
        loop {
            if t == 0 {
                let nll = if scores.is_empty() {
                    f64::INFINITY
                } else {
                    -crate::tensor::log_sum_exp(&scores)
                };
                return Ok(nll);
            }
            t -= 1;
            path[t] += 1;
            if path[t] < classes {
                break;
            }
            path[t] = 0;
        }
    }
}

/// Per-frame argmax followed by [`collapse`].
pub fn greedy_ctc_decode<T: Scalar>(lat: &LogProbLattice<T>) -> Vec<usize> {
    let path: Vec<usize> = (0..lat.frames())
        .map(|t| {
            let row = lat.matrix().row(t);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    collapse(&path, lat.blank())
}

/// Losses for independent `(lattice, labels)` pairs, evaluated in parallel.
pub fn ctc_batch<T: Scalar>(items: &[(LogProbLattice<T>, Vec<usize>)]) -> Result<Vec<CtcLoss<T>>> {
    items
        .par_iter()
        .map(|(lat, z)| ctc_neg_log_likelihood(lat, z))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 0;
    const B: usize = 1;
    const BLANK: usize = 2;

    fn uniform(frames: usize, classes: usize) -> LogProbLattice<f64> {
        LogProbLattice::new(Matrix::filled(frames, classes, -(classes as f64).ln())).unwrap()
    }

    #[test]
    fn collapse_cases() {
        assert_eq!(collapse(&[A, A, BLANK, B], BLANK), [A, B]);
        assert_eq!(collapse(&[BLANK, BLANK], BLANK), Vec::<usize>::new());
        assert_eq!(collapse(&[A, BLANK, A], BLANK), [A, A]);
    }

    #[test]
    fn single_frame_single_label() {
        let lat = LogProbLattice::from_probs(&[vec![0.7, 0.1, 0.2]]).unwrap();
        let loss = ctc_neg_log_likelihood(&lat, &[A]).unwrap();
        assert!(loss.feasible);
        assert!((loss.nll + 0.7f64.ln()).abs() < 1e-12);
        let (_, g) = ctc_grad(&lat, &[A]).unwrap();
        assert_eq!(g.as_slice(), &[-1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_label_all_blank() {
        let lat = LogProbLattice::<f64>::from_probs(&[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(ctc_neg_log_likelihood(&lat, &[]).unwrap().nll.abs() < 1e-12);

        let lat = LogProbLattice::from_probs(&[vec![0.5, 0.2, 0.3], vec![0.1, 0.5, 0.4]]).unwrap();
        let expect = -(0.3f64.ln() + 0.4f64.ln());
        assert!((ctc_neg_log_likelihood(&lat, &[]).unwrap().nll - expect).abs() < 1e-12);
        assert!((brute_force_nll(&lat, &[]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_frames_one_label() {
        // paths collapsing to [a]: (a,a), (a,_), (_,a) -> 3 of 9
        let lat = uniform(2, 3);
        let nll = ctc_neg_log_likelihood(&lat, &[A]).unwrap().nll;
        assert!((nll + (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_pairs() {
        let lat = uniform(2, 3);
        let loss = ctc_neg_log_likelihood(&lat, &[A, A]).unwrap();
        assert!(!loss.feasible && loss.nll == f64::INFINITY);
        assert_eq!(brute_force_nll(&lat, &[A, A]).unwrap(), f64::INFINITY);
        assert!(matches!(
            ctc_grad(&lat, &[A, B, A]),
            Err(Error::Infeasible { frames: 2, required: 3 })
        ));
        assert!(ctc_neg_log_likelihood(&lat, &[A, B]).unwrap().feasible);
    }

    #[test]
    fn label_equal_to_blank_is_rejected() {
        let lat = uniform(3, 3);
        assert!(matches!(
            ctc_neg_log_likelihood(&lat, &[BLANK]),
            Err(Error::IdOutOfRange { .. })
        ));
    }

    #[test]
    fn empty_lattice_is_an_error() {
        assert!(matches!(
            LogProbLattice::<f64>::new(Matrix::zeros(0, 3)),
            Err(Error::EmptyLattice)
        ));
    }

    #[test]
    fn enumeration_guard() {
        let lat = uniform(13, 3); // 3^13 > 1e6
        assert!(matches!(
            brute_force_nll(&lat, &[A]),
            Err(Error::EnumerationGuard { .. })
        ));
    }

    #[test]
    fn greedy_decoding() {
        let hot = |c: usize| {
            let mut r = vec![0.1 / 2.0; 3];
            r[c] = 0.9;
            r
        };
        let lat = LogProbLattice::from_probs(&[hot(A), hot(A), hot(BLANK), hot(B)]).unwrap();
        assert_eq!(greedy_ctc_decode(&lat), [A, B]);
        let lat = LogProbLattice::from_probs(&[hot(BLANK), hot(BLANK)]).unwrap();
        assert!(greedy_ctc_decode(&lat).is_empty());
        let lat = LogProbLattice::from_probs(&[hot(A), hot(BLANK), hot(A)]).unwrap();
        assert_eq!(greedy_ctc_decode(&lat), [A, A]);
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let (frames, classes) = (2000, 257);
        let mut rng = crate::rng::Rng::new(1);
        let logits = Matrix::from_fn(frames, classes, |_, _| rng.normal() * 3.0);
        let lat = LogProbLattice::from_logits(logits).unwrap();
        let z: Vec<usize> = (0..600).map(|i| (i * 37) % 256).collect();
        let loss = ctc_neg_log_likelihood(&lat, &z).unwrap();
        assert!(loss.feasible && loss.nll.is_finite() && loss.nll > 0.0);
        let (nll, g) = ctc_grad(&lat, &z).unwrap();
        assert!((nll - loss.nll).abs() < 1e-6 * loss.nll);
        for t in [0, 999, 1999] {
            let s: f64 = g.row(t).iter().sum();
            assert!((s + 1.0).abs() < 1e-8, "row {t} sums to {s}");
        }
    }

    #[test]
    fn batch_matches_single() {
        let lat = uniform(4, 3);
        let items = vec![(lat.clone(), vec![A]), (lat.clone(), vec![A, A, A])];
        let out = ctc_batch(&items).unwrap();
        assert_eq!(out[0], ctc_neg_log_likelihood(&lat, &[A]).unwrap());
        assert!(!out[1].feasible);
    }

    #[test]
    fn inspection_reports_posteriors() {
        let lat = LogProbLattice::<f64>::from_probs(&[vec![0.2, 0.5, 0.3]]).unwrap();
        let report = inspect(&lat, &[1]).unwrap();
        assert!((report.nll.unwrap() + 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(report.posteriors.unwrap(), vec![vec![0.0, 1.0, 0.0]]);
        assert_eq!(report.greedy, vec![1]);
        let none = inspect(&lat, &[0, 1]).unwrap();
        assert!(!none.feasible && none.nll.is_none() && none.posteriors.is_none());
    }
}
