//! Per-subword coreference ids and the token-pair attention bias built from them.

use serde::{Deserialize, Serialize};

use crate::coref::CorefClusters;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenize::TokenAlignment;

/// One cluster id per subword: 0 for "in no mention", `n >= 1` for cluster `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefArray {
    pub ids: Vec<usize>,
}

impl CorefArray {
    pub fn zeros(len: usize) -> Self {
        Self { ids: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// Places this array at `offset` inside a zero array of length `total`,
    /// dropping entries that fall past the end.
    pub fn embed(&self, offset: usize, total: usize) -> CorefArray {
        let mut ids = vec![0; total];
        for (i, &id) in self.ids.iter().enumerate() {
            if let Some(slot) = ids.get_mut(offset + i) {
                *slot = id;
            }
        }
        CorefArray { ids }.compacted()
    }

    /// Renumbers ids to `1..=n` preserving their order, so that the ids in
    /// use are contiguous from 1.
    pub fn compacted(mut self) -> Self {
        let max = self.cluster_count();
        let mut present = vec![false; max + 1];
        for &id in &self.ids {
            present[id] = true;
        }
        let mut remap = vec![0; max + 1];
        let mut next = 0;
        for id in 1..=max {
            if present[id] {
                next += 1;
                remap[id] = next;
            }
        }
        for id in &mut self.ids {
            *id = remap[*id];
        }
        self
    }
}

/// Per-word cluster ids. A word inside several mentions takes the id of the
/// narrowest one, ties going to the lower cluster id.
pub fn word_cluster_ids(word_count: usize, clusters: &CorefClusters) -> Result<Vec<usize>> {
    let mut best: Vec<Option<(usize, usize)>> = vec![None; word_count];
    for (ci, cluster) in clusters.clusters.iter().enumerate() {
        let id = ci + 1;
        for m in cluster {
            if m.start_word > m.end_word || m.end_word >= word_count {
                return Err(Error::Validation(format!(
                    "cluster {id}: span {}..={} outside document of {word_count} words",
                    m.start_word, m.end_word
                )));
            }
            let key = (m.width(), id);
            for slot in &mut best[m.start_word..=m.end_word] {
                if slot.is_none_or(|cur| key < cur) {
                    *slot = Some(key);
                }
            }
        }
    }
    let ids = best
        .into_iter()
        .map(|s| s.map_or(0, |(_, id)| id))
        .collect();
    Ok(CorefArray { ids }.compacted().ids)
}

/// Projects word-level cluster ids onto subwords through the alignment.
pub fn build_coref_array(
    alignment: &TokenAlignment,
    clusters: &CorefClusters,
) -> Result<CorefArray> {
    let word_ids = word_cluster_ids(alignment.words.len(), clusters)?;
    let ids = alignment
        .subwords
        .iter()
        .map(|s| word_ids[s.word_index])
        .collect();
    Ok(CorefArray { ids })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    Additive,
    Multiplicative,
}

impl BiasMode {
    /// The entry value that leaves attention scores untouched.
    pub fn identity(self) -> f64 {
        match self {
            BiasMode::Additive => 0.0,
            BiasMode::Multiplicative => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorefBiasMatrix {
    pub mode: BiasMode,
    pub values: Tensor,
}

impl CorefBiasMatrix {
    /// A `k×k` matrix of identity elements: attention is left unchanged.
    pub fn neutral(k: usize, mode: BiasMode) -> Self {
        Self {
            mode,
            values: Tensor::full(&[k, k], mode.identity()),
        }
    }

    pub fn size(&self) -> usize {
        self.values.rows()
    }
}

/// Entry `(i, j)` is `weight` when `i != j` and both tokens carry the same
/// nonzero cluster id; every other entry (including the diagonal) is the
/// mode's identity element.
pub fn build_bias_matrix(a: &CorefArray, weight: f64, mode: BiasMode) -> Result<CorefBiasMatrix> {
    if !weight.is_finite() {
        return Err(Error::Config(format!(
            "coref_weight must be finite, got {weight}"
        )));
    }
    if mode == BiasMode::Multiplicative && weight <= 0.0 {
        return Err(Error::Config(format!(
            "multiplicative coref_weight must be positive, got {weight}"
        )));
    }
    let k = a.len();
    let mut m = CorefBiasMatrix::neutral(k, mode);
    for i in 0..k {
        if a.ids[i] == 0 {
            continue;
        }
        for j in 0..k {
            if i != j && a.ids[j] == a.ids[i] {
                m.values.data[i * k + j] = weight;
            }
        }
    }
    Ok(m)
}
