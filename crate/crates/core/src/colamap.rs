//! Coarse label mappings `f: [0, V) -> [0, L)`.
//!
//! All fixed mappings assume ids are frequency ranks. With a
//! [`ShufflePermutation`] attached, `z` is replaced by `perm(z)` first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vocab::ShufflePermutation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    Identity,
    #[serde(rename = "tru")]
    Truncation,
    #[serde(rename = "mod")]
    Modulo,
    #[serde(rename = "div")]
    Division,
    #[serde(rename = "log")]
    LogScaling,
    Random,
}

impl MappingKind {
    pub const ALL: [MappingKind; 6] = [
        MappingKind::Identity,
        MappingKind::Truncation,
        MappingKind::Modulo,
        MappingKind::Division,
        MappingKind::LogScaling,
        MappingKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MappingKind::Identity => "identity",
            MappingKind::Truncation => "tru",
            MappingKind::Modulo => "mod",
            MappingKind::Division => "div",
            MappingKind::LogScaling => "log",
            MappingKind::Random => "random",
        }
    }
}

impl fmt::Display for MappingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MappingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "genuine" => Ok(MappingKind::Identity),
            "tru" | "truncation" => Ok(MappingKind::Truncation),
            "mod" | "modulo" => Ok(MappingKind::Modulo),
            "div" | "division" => Ok(MappingKind::Division),
            "log" | "logscaling" | "log-scaling" => Ok(MappingKind::LogScaling),
            "random" => Ok(MappingKind::Random),
            other => Err(Error::config(
                "mapping",
                format!("unknown mapping {other:?} (identity|tru|mod|div|log|random)"),
            )),
        }
    }
}

/// A mapping kind bound to `(V, L)`.
///
/// The Random kind owns its generator and re-draws on every call, so mapping
/// requires `&mut self`; use [`CoarseMapper::map_fixed`] for shared access to
/// the deterministic kinds.
#[derive(Clone, Debug)]
pub struct CoarseMapper {
    kind: MappingKind,
    vocab_size: usize,
    label_size: usize,
    seed: u64,
    perm: Option<ShufflePermutation>,
    rng: Rng,
}

impl CoarseMapper {
    pub fn new(kind: MappingKind, vocab_size: usize, label_size: usize) -> Result<Self> {
        Self::with_seed(kind, vocab_size, label_size, 0)
    }

    pub fn with_seed(kind: MappingKind, vocab_size: usize, label_size: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || label_size == 0 {
            return Err(Error::InvalidMapper("V and L must be positive".into()));
        }
        if label_size > vocab_size {
            return Err(Error::InvalidMapper(format!(
                "label size {label_size} exceeds vocabulary size {vocab_size}"
            )));
        }
        if kind == MappingKind::Identity && label_size != vocab_size {
            return Err(Error::InvalidMapper(format!(
                "identity mapping needs L = V, got L = {label_size}, V = {vocab_size}"
            )));
        }
        Ok(CoarseMapper {
            kind,
            vocab_size,
            label_size,
            seed,
            perm: None,
            rng: Rng::derive(seed, &[0x7261_6e64]),
        })
    }

    /// Genuine labels: identity over the whole vocabulary.
    pub fn identity(vocab_size: usize) -> Result<Self> {
        Self::new(MappingKind::Identity, vocab_size, vocab_size)
    }

    pub fn with_permutation(mut self, perm: ShufflePermutation) -> Result<Self> {
        if perm.len() != self.vocab_size {
            return Err(Error::InvalidMapper(format!(
                "permutation covers {} ids, vocabulary has {}",
                perm.len(),
                self.vocab_size
            )));
        }
        self.perm = Some(perm);
        Ok(self)
    }

    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn label_size(&self) -> usize {
        self.label_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation(&self) -> Option<&ShufflePermutation> {
        self.perm.as_ref()
    }

    /// Restarts the Random stream from the mapper's seed.
    pub fn reset(&mut self) {
        self.rng = Rng::derive(self.seed, &[0x7261_6e64]);
    }

    fn check(&self, z: usize, index: Option<usize>) -> Result<usize> {
        if z >= self.vocab_size {
            return Err(Error::IdOutOfRange {
                id: z,
                bound: self.vocab_size,
                index,
            });
        }
        Ok(self.perm.as_ref().map_or(z, |p| p.apply(z)))
    }

    fn fixed(&self, z: usize) -> usize {
        let (v, l) = (self.vocab_size, self.label_size);
        match self.kind {
            MappingKind::Identity => z,
            MappingKind::Truncation => z.min(l - 1),
            MappingKind::Modulo => z % l,
            MappingKind::Division => ((z as u128 * l as u128) / v as u128) as usize,
            MappingKind::LogScaling => {
                if v == 1 {
                    return 0;
                }
                let x = (z.max(1) as f64).ln() * l as f64 / (v as f64).ln();
                (x.floor() as usize).min(l - 1)
            }
            MappingKind::Random => unreachable!("random handled by caller"),
        }
    }

    pub fn map_id(&mut self, z: usize) -> Result<usize> {
        let z = self.check(z, None)?;
        Ok(match self.kind {
            MappingKind::Random => self.rng.below_usize(self.label_size),
            _ => self.fixed(z),
        })
    }

    /// Deterministic mapping through a shared reference; errors for Random.
    pub fn map_fixed(&self, z: usize) -> Result<usize> {
        if self.kind == MappingKind::Random {
            return Err(Error::NotAFixedMapping);
        }
        let z = self.check(z, None)?;
        Ok(self.fixed(z))
    }

    /// Element-wise map. Consecutive duplicates are kept.
    pub fn map_sequence(&mut self, zs: &[usize]) -> Result<Vec<usize>> {
        zs.iter()
            .enumerate()
            .map(|(i, &z)| {
                let z = self.check(z, Some(i))?;
                Ok(match self.kind {
                    MappingKind::Random => self.rng.below_usize(self.label_size),
                    _ => self.fixed(z),
                })
            })
            .collect()
    }

    /// Size of each coarse label's preimage.
    pub fn label_histogram(&self) -> Result<Vec<usize>> {
        if self.kind == MappingKind::Random {
            return Err(Error::NotAFixedMapping);
        }
        let mut counts = vec![0; self.label_size];
        for z in 0..self.vocab_size {
            counts[self.map_fixed(z)?] += 1;
        }
        Ok(counts)
    }
}
