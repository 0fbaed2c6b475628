//! PointInfoNCE loss over matched feature vectors, with analytic gradients.
//!
//! For a match set `M` of `(anchor, positive)` index pairs into feature maps
//! `A` and `B`, the loss is
//!
//! ```text
//! L = - sum_{(i,j) in M} log( exp(a_i . b_j / tau) / sum_{(., k) in M} exp(a_i . b_k / tau) )
//! ```
//!
//! The candidate pool in the denominator is, by default, the positives of all
//! pairs in `M` (the anchor's own positive included). [`NegativePool`]
//! selects the alternatives.

use rayon::prelude::*;
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContrastiveError {
    #[error("match set is empty")]
    EmptyMatchSet,
    #[error("temperature {0} must be positive")]
    InvalidTemperature(f64),
    #[error("match ({0}, {1}) indexes outside the feature maps")]
    IndexOutOfRange(usize, usize),
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid feature map: {0}")]
    InvalidFeatures(String),
    #[error("negative pool is empty for anchor {0}")]
    EmptyPool(usize),
}

/// Whether a feature map came from image pixels or from 3D points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureOrigin {
    #[default]
    Pixel,
    Point,
}

/// `count` feature vectors of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    data: Vec<f64>,
    pub origin: FeatureOrigin,
    unit_norm: bool,
}

impl FeatureMap {
    pub fn new(dim: usize, data: Vec<f64>, origin: FeatureOrigin) -> Result<Self, ContrastiveError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(ContrastiveError::InvalidFeatures(format!("{} values do not form rows of {dim}", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(ContrastiveError::InvalidFeatures("non-finite entry".into()));
        }
        Ok(Self { dim, data, origin, unit_norm: false })
    }

    pub fn from_rows(rows: &[Vec<f64>], origin: FeatureOrigin) -> Result<Self, ContrastiveError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ContrastiveError::InvalidFeatures("ragged rows".into()));
        }
        Self::new(dim, rows.concat(), origin)
    }

    /// Scales every row to unit L2 norm (zero rows are left untouched).
    pub fn normalized(mut self) -> Self {
        for row in self.data.chunks_mut(self.dim) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        self.unit_norm = true;
        self
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize)>,
}

impl MatchSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Which `B` vectors compete with an anchor's positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativePool {
    /// Positives of every pair in the match set, the anchor's own included.
    #[default]
    Matched,
    /// Positives of every other pair; the anchor's own term is left out of the denominator.
    MatchedExcludingSelf,
    /// Every vector of `B`.
    AllTargets,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NceConfig {
    pub temperature: f64,
    pub pool: NegativePool,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, pool: NegativePool::Matched }
    }
}

impl NceConfig {
    pub fn with_temperature(temperature: f64) -> Self {
        Self { temperature, ..Default::default() }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn validate(a: &FeatureMap, b: &FeatureMap, m: &MatchSet, cfg: &NceConfig) -> Result<(), ContrastiveError> {
    if m.is_empty() {
        return Err(ContrastiveError::EmptyMatchSet);
    }
    if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
        return Err(ContrastiveError::InvalidTemperature(cfg.temperature));
    }
    if a.dim != b.dim {
        return Err(ContrastiveError::DimensionMismatch(a.dim, b.dim));
    }
    if let Some(&(i, j)) = m.pairs.iter().find(|&&(i, j)| i >= a.len() || j >= b.len()) {
        return Err(ContrastiveError::IndexOutOfRange(i, j));
    }
    if cfg.pool == NegativePool::MatchedExcludingSelf && m.len() < 2 {
        return Err(ContrastiveError::EmptyPool(0));
    }
    Ok(())
}

/// Candidate `B` indices for term `n`, paired with whether the candidate is the term's positive.
fn pool_for(n: usize, b: &FeatureMap, m: &MatchSet, pool: NegativePool) -> Vec<(usize, bool)> {
    match pool {
        NegativePool::Matched => m.pairs.iter().enumerate().map(|(k, &(_, j))| (j, k == n)).collect(),
        NegativePool::MatchedExcludingSelf => m.pairs.iter().enumerate().filter(|&(k, _)| k != n).map(|(_, &(_, j))| (j, false)).collect(),
        NegativePool::AllTargets => {
            let own = m.pairs[n].1;
            (0..b.len()).map(|j| (j, j == own)).collect()
        }
    }
}

/// Per-term softmax over the pool: returns the candidate list, probabilities and the term loss.
fn term(n: usize, a: &FeatureMap, b: &FeatureMap, m: &MatchSet, cfg: &NceConfig) -> (Vec<(usize, bool)>, Vec<f64>, f64) {
    let (i, j) = m.pairs[n];
    let anchor = a.row(i);
    let inv_t = 1.0 / cfg.temperature;
    let pool = pool_for(n, b, m, cfg.pool);
    let logits: Vec<f64> = pool.iter().map(|&(k, _)| dot(anchor, b.row(k)) * inv_t).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let lse = max + z.ln();
    let positive = dot(anchor, b.row(j)) * inv_t;
    let probs = exps.iter().map(|e| e / z).collect();
    (pool, probs, lse - positive)
}

pub fn point_info_nce(a: &FeatureMap, b: &FeatureMap, m: &MatchSet, cfg: &NceConfig) -> Result<f64, ContrastiveError> {
    validate(a, b, m, cfg)?;
    let terms: Vec<f64> = (0..m.len()).into_par_iter().map(|n| term(n, a, b, m, cfg).2).collect();
    Ok(terms.iter().sum())
}

/// Gradients of [`point_info_nce`] with respect to every row of `A` and `B`
/// (rows not referenced by the match set get zeros).
pub fn point_info_nce_grad(a: &FeatureMap, b: &FeatureMap, m: &MatchSet, cfg: &NceConfig) -> Result<(Vec<f64>, Vec<f64>), ContrastiveError> {
    validate(a, b, m, cfg)?;
    let dim = a.dim;
    let inv_t = 1.0 / cfg.temperature;
    let softmaxes: Vec<_> = (0..m.len()).into_par_iter().map(|n| term(n, a, b, m, cfg)).collect();
    let mut ga = vec![0.0; a.data.len()];
    let mut gb = vec![0.0; b.data.len()];
    // fixed-order accumulation keeps the result bit-stable
    for (n, (pool, probs, _)) in softmaxes.iter().enumerate() {
        let (i, j) = m.pairs[n];
        let anchor = a.row(i);
        // dL_n/ds_k = p_k - [k is the positive]; s_k = a_i . b_k / tau
        for (&(k, _), &p) in pool.iter().zip(probs) {
            let bk = b.row(k);
            for d in 0..dim {
                ga[i * dim + d] += p * bk[d] * inv_t;
                gb[k * dim + d] += p * anchor[d] * inv_t;
            }
        }
        let bj = b.row(j);
        for d in 0..dim {
            ga[i * dim + d] -= bj[d] * inv_t;
            gb[j * dim + d] -= anchor[d] * inv_t;
        }
    }
    Ok((ga, gb))
}

/// Weighted sum of the two contrastive objectives.
pub fn combined_loss(l_gcvi: f64, l_vsag: f64, w_gcvi: f64, w_vsag: f64) -> f64 {
    debug_assert!(w_gcvi >= 0.0 && w_vsag >= 0.0);
    w_gcvi * l_gcvi + w_vsag * l_vsag
}
