//! Partial bijections on `[1,t]`.
//!
//! A [`PartialBijection`] is a partial function on `{1, …, t}` that is
//! injective where defined. These maps are the bookkeeping device behind
//! the generated nonterminals of the normalization pipeline: a pair of
//! them records how external nodes travel between derivation stages.

use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;

/// Errors raised by partial-bijection construction and composition.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    /// A pair's source or target fell outside `[1,t]`.
    #[error("pair ({i}, {j}) is out of range for ambient size {t}")]
    OutOfRange { i: usize, j: usize, t: usize },
    /// Two pairs shared a source or a target.
    #[error("pairs are not injective: {0} is used twice")]
    NotInjective(usize),
    /// Composition or comparison of maps with different ambient sizes.
    #[error("ambient size mismatch: {0} vs {1}")]
    AmbientMismatch(usize, usize),
    /// Enumeration was asked for an ambient size above the cap.
    #[error("ambient size {t} exceeds the enumeration cap {cap}")]
    CapExceeded { t: usize, cap: usize },
}

/// Default cap on the ambient size accepted by
/// [`enumerate_partial_bijections`]; the count grows super-exponentially.
pub const DEFAULT_AMBIENT_CAP: usize = 4;

/// A partial injective map on `[1,t]`, ordered and compared by its pair set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartialBijection {
    t: usize,
    pairs: BTreeMap<usize, usize>,
}

impl PartialBijection {
    /// Builds a map from `(source, target)` pairs, all within `[1,t]`,
    /// no source or target repeated.
    pub fn new(
        t: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, MappingError> {
        let mut map = BTreeMap::new();
        let mut targets = BTreeMap::new();
        for (i, j) in pairs {
            if i < 1 || i > t || j < 1 || j > t {
                return Err(MappingError::OutOfRange { i, j, t });
            }
            if map.insert(i, j).is_some() {
                return Err(MappingError::NotInjective(i));
            }
            if targets.insert(j, i).is_some() {
                return Err(MappingError::NotInjective(j));
            }
        }
        Ok(PartialBijection { t, pairs: map })
    }

    /// The empty map on `[1,t]`.
    pub fn empty(t: usize) -> Self {
        PartialBijection {
            t,
            pairs: BTreeMap::new(),
        }
    }

    /// The total identity map on `[1,t]`.
    pub fn identity(t: usize) -> Self {
        PartialBijection {
            t,
            pairs: (1..=t).map(|i| (i, i)).collect(),
        }
    }

    /// The ambient size `t`.
    pub fn ambient(&self) -> usize {
        self.t
    }

    /// The image of `i`, if defined.
    pub fn apply(&self, i: usize) -> Option<usize> {
        self.pairs.get(&i).copied()
    }

    /// The domain, ascending.
    pub fn dom(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.keys().copied()
    }

    /// The range, ascending.
    pub fn ran(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.values().copied().sorted()
    }

    /// Number of defined points.
    pub fn dom_size(&self) -> usize {
        self.pairs.len()
    }

    /// The pairs, ascending by source.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().map(|(&i, &j)| (i, j))
    }

    pub fn is_identity(&self) -> bool {
        self.pairs.len() == self.t && self.pairs.iter().all(|(&i, &j)| i == j)
    }

    /// Composition `self ∘ f` (apply `f` first): defined on the points
    /// `i ∈ Dom(f)` with `f(i) ∈ Dom(self)`.
    pub fn compose(&self, f: &PartialBijection) -> Result<PartialBijection, MappingError> {
        if self.t != f.t {
            return Err(MappingError::AmbientMismatch(self.t, f.t));
        }
        let pairs = f
            .pairs
            .iter()
            .filter_map(|(&i, &j)| self.pairs.get(&j).map(|&k| (i, k)))
            .collect();
        Ok(PartialBijection { t: self.t, pairs })
    }

    /// Name fragment used when embedding the map in generated symbol
    /// names: pairs sorted by source, each rendered `i-j`, joined by `_`;
    /// the empty map renders `0`.
    pub fn name_fragment(&self) -> String {
        if self.pairs.is_empty() {
            return "0".to_string();
        }
        self.pairs
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .join("_")
    }
}

impl fmt::Display for PartialBijection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (idx, (i, j)) in self.pairs.iter().enumerate() {
            if idx > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{i}→{j}")?;
        }
        write!(f, "}}")
    }
}

/// Enumerates every partial bijection on `[1,t]`, with the default
/// ambient cap.
pub fn enumerate_partial_bijections(t: usize) -> Result<Vec<PartialBijection>, MappingError> {
    enumerate_partial_bijections_capped(t, DEFAULT_AMBIENT_CAP)
}

/// Enumerates every partial bijection on `[1,t]`, duplicate-free, in a
/// deterministic order: domains ascend as bitmasks over `[1,t]`, and maps
/// with equal domain ascend lexicographically by their image tuples.
pub fn enumerate_partial_bijections_capped(
    t: usize,
    cap: usize,
) -> Result<Vec<PartialBijection>, MappingError> {
    if t > cap {
        return Err(MappingError::CapExceeded { t, cap });
    }
    let mut out = Vec::new();
    for mask in 0u32..(1 << t) {
        let dom: Vec<usize> = (1..=t).filter(|i| mask & (1 << (i - 1)) != 0).collect();
        let k = dom.len();
        for image in (1..=t).permutations(k) {
            let pairs = dom.iter().copied().zip(image.iter().copied());
            out.push(PartialBijection {
                t,
                pairs: pairs.collect(),
            });
        }
    }
    Ok(out)
}
