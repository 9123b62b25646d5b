use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A clustering of `n` sites with labels in `0..k_active()`, canonically
/// numbered by order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl Partition {
    /// Canonicalizes arbitrary labels. Empty clusters disappear.
    pub fn from_labels(raw: &[usize]) -> Self {
        let (labels, _) = canonical_relabel(raw);
        let k = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        let mut counts = vec![0; k];
        for &l in &labels {
            counts[l] += 1;
        }
        Partition { labels, counts }
    }

    pub fn single_cluster(n: usize) -> Self {
        Partition {
            labels: vec![0; n],
            counts: if n > 0 { vec![n] } else { Vec::new() },
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k_active(&self) -> usize {
        self.counts.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Labels numbered from one, as written to reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == cluster)
            .map(|(i, _)| i)
    }

    pub fn check_same_size(&self, other: &Partition) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::Input(format!(
                "partitions have different sizes ({} vs {})",
                self.n(),
                other.n()
            )));
        }
        Ok(())
    }
}

/// Relabels by order of first appearance. Returns the new labels and, for
/// each new label, the raw label it came from.
pub fn canonical_relabel(raw: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut origin: Vec<usize> = Vec::new();
    let mut map = std::collections::HashMap::new();
    let labels = raw
        .iter()
        .map(|&r| {
            *map.entry(r).or_insert_with(|| {
                origin.push(r);
                origin.len() - 1
            })
        })
        .collect();
    (labels, origin)
}
