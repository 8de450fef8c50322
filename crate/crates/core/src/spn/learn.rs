//! Counting positive sum-edge contributions and the plaintext weight learner.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{NodeId, NodeKind, SpnGraph};

/// Boolean positivity of every node for one complete row.
///
/// A leaf is positive when its indicator fires, a product when all children
/// are positive and a sum when any child is. Weights are ignored.
pub fn positivity(spn: &SpnGraph, row: &[bool]) -> Vec<bool> {
    let mut pos = vec![false; spn.nodes().len()];
    for &i in spn.bottom_up() {
        pos[i] = match &spn.node(i).kind {
            NodeKind::Leaf { var, polarity } => polarity.matches(row[*var]),
            NodeKind::Sum { children } => children.iter().any(|(c, _)| pos[*c]),
            NodeKind::Product { children } => children.iter().all(|c| pos[*c]),
        };
    }
    pos
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct SelectivityViolation {
    pub node: String,
    pub row: usize,
    pub positive_children: usize,
}

impl fmt::Display for SelectivityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sum node {} has {} positive children on row {}",
            self.node, self.positive_children, self.row
        )
    }
}

/// Every sum node with more than one positive child on some row, reported
/// once per node at the first offending row.
pub fn check_selectivity(spn: &SpnGraph, data: &[Vec<bool>]) -> Vec<SelectivityViolation> {
    let mut found: BTreeMap<NodeId, SelectivityViolation> = BTreeMap::new();
    for (r, row) in data.iter().enumerate() {
        let pos = positivity(spn, row);
        for (i, children) in spn.sum_nodes() {
            if found.contains_key(&i) {
                continue;
            }
            let k = children.iter().filter(|(c, _)| pos[*c]).count();
            if k > 1 {
                found.insert(
                    i,
                    SelectivityViolation {
                        node: spn.node(i).name.clone(),
                        row: r,
                        positive_children: k,
                    },
                );
            }
        }
    }
    found.into_values().collect()
}

/// Per sum node, how many rows made each child (in child order) positive.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SumEdgeCounts {
    pub counts: BTreeMap<NodeId, Vec<u64>>,
}

impl SumEdgeCounts {
    pub fn zeros(spn: &SpnGraph) -> Self {
        Self {
            counts: spn
                .sum_nodes()
                .map(|(i, ch)| (i, vec![0; ch.len()]))
                .collect(),
        }
    }

    pub fn get(&self, node: NodeId) -> &[u64] {
        self.counts.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self, node: NodeId) -> u64 {
        self.get(node).iter().sum()
    }

    /// Element-wise sum; both sides must come from the same network.
    pub fn merge(&mut self, other: &SumEdgeCounts) {
        for (node, counts) in &other.counts {
            let mine = self
                .counts
                .entry(*node)
                .or_insert_with(|| vec![0; counts.len()]);
            for (a, b) in mine.iter_mut().zip(counts) {
                *a += b;
            }
        }
    }
}

/// Counts positive child contributions row by row.
///
/// Fails on the first row where a sum node has two positive children, since
/// the counts would no longer be a maximum-likelihood statistic.
pub fn count_contributions(
    spn: &SpnGraph,
    data: &[Vec<bool>],
) -> Result<SumEdgeCounts, SelectivityViolation> {
    let mut out = SumEdgeCounts::zeros(spn);
    for (r, row) in data.iter().enumerate() {
        let pos = positivity(spn, row);
        for (i, children) in spn.sum_nodes() {
            let positive: Vec<usize> = children
                .iter()
                .enumerate()
                .filter(|(_, (c, _))| pos[*c])
                .map(|(j, _)| j)
                .collect();
            if positive.len() > 1 {
                return Err(SelectivityViolation {
                    node: spn.node(i).name.clone(),
                    row: r,
                    positive_children: positive.len(),
                });
            }
            if let Some(&j) = positive.first() {
                out.counts.get_mut(&i).expect("sum node present")[j] += 1;
            }
        }
    }
    Ok(out)
}

/// Splits `scale` proportionally to `counts` with the largest remainder method.
///
/// Each share starts at `floor(scale * n_j / N)`; the leftover units go to the
/// largest fractional parts, ties to the lower index. All-zero counts give a
/// uniform split.
pub fn largest_remainder(counts: &[u64], scale: u128) -> Vec<u128> {
    if counts.is_empty() {
        return Vec::new();
    }
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    let (weights, den): (Vec<u128>, u128) = if total == 0 {
        (vec![1; counts.len()], counts.len() as u128)
    } else {
        (counts.iter().map(|&c| c as u128).collect(), total)
    };
    let mut out: Vec<u128> = weights.iter().map(|w| scale * w / den).collect();
    let mut rems: Vec<(u128, usize)> = weights
        .iter()
        .enumerate()
        .map(|(j, w)| (scale * w % den, j))
        .collect();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: u128 = out.iter().sum();
    for &(_, j) in rems.iter().take((scale - assigned) as usize) {
        out[j] += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnedWeights {
    pub weights: BTreeMap<NodeId, Vec<u128>>,
    /// Sum nodes with no data; they received uniform weights.
    pub degenerate: Vec<NodeId>,
}

/// Maximum-likelihood weights from counts, with optional add-`alpha` smoothing.
pub fn oracle_learn(spn: &SpnGraph, counts: &SumEdgeCounts, alpha: u64) -> LearnedWeights {
    let mut weights = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (i, children) in spn.sum_nodes() {
        let mut c: Vec<u64> = counts.get(i).to_vec();
        c.resize(children.len(), 0);
        for x in &mut c {
            *x += alpha;
        }
        if c.iter().all(|&x| x == 0) {
            degenerate.push(i);
        }
        weights.insert(i, largest_remainder(&c, spn.scale()));
    }
    LearnedWeights {
        weights,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spn::{example_network, random_selective, GeneratorConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[2, 1], 256), vec![171, 85]);
        assert_eq!(largest_remainder(&[6, 1], 256), vec![219, 37]);
        assert_eq!(largest_remainder(&[0, 0, 0], 256), vec![86, 85, 85]);
        assert_eq!(largest_remainder(&[3, 0], 1000), vec![1000, 0]);
    }

    #[test]
    fn smoothing() {
        let spn = example_network();
        let mut counts = SumEdgeCounts::zeros(&spn);
        let s1 = spn.find("S1").unwrap();
        counts.counts.insert(s1, vec![5, 0]);
        let learned = oracle_learn(&spn, &counts, 1);
        assert_eq!(learned.weights[&s1], vec![857, 143]);
        assert!(learned.degenerate.is_empty());
        let plain = oracle_learn(&spn, &counts, 0);
        assert_eq!(plain.weights[&s1], vec![1000, 0]);
        assert_eq!(plain.degenerate.len(), 4);
    }

    #[test]
    fn example_network_is_not_selective() {
        // Every product under the root is positive on every row.
        let spn = example_network();
        let rows = vec![vec![true, true]];
        let v = check_selectivity(&spn, &rows);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].node, "S");
        assert_eq!(v[0].positive_children, 3);
        assert!(count_contributions(&spn, &rows).is_err());
    }

    #[test]
    fn counts_on_selective_network() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut cfg = GeneratorConfig::new(4, 256);
        cfg.split_prob = 1.0;
        let spn = random_selective(&cfg, &mut rng);
        let rows: Vec<Vec<bool>> = (0..50)
            .map(|_| (0..4).map(|_| rng.gen()).collect())
            .collect();
        assert!(check_selectivity(&spn, &rows).is_empty());
        let counts = count_contributions(&spn, &rows).unwrap();
        // Every row reaches the root through exactly one child.
        assert_eq!(counts.total(spn.root()), 50);
    }

    proptest! {
        #[test]
        fn largest_remainder_sums_to_scale(
            counts in proptest::collection::vec(0u64..1000, 1..8),
            scale in 1u128..100_000,
        ) {
            let w = largest_remainder(&counts, scale);
            prop_assert_eq!(w.iter().sum::<u128>(), scale);
            let total: u64 = counts.iter().sum();
            if total > 0 {
                for (wj, cj) in w.iter().zip(&counts) {
                    let exact = scale as f64 * *cj as f64 / total as f64;
                    prop_assert!((*wj as f64 - exact).abs() < 1.0);
                }
            }
        }

        #[test]
        fn counts_are_additive_over_partitions(seed in 0u64..500, split in 0usize..30) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let spn = random_selective(&GeneratorConfig::new(5, 100), &mut rng);
            let rows: Vec<Vec<bool>> = (0..30)
                .map(|_| (0..5).map(|_| rng.gen()).collect())
                .collect();
            let whole = count_contributions(&spn, &rows).unwrap();
            let mut parts = count_contributions(&spn, &rows[..split]).unwrap();
            parts.merge(&count_contributions(&spn, &rows[split..]).unwrap());
            prop_assert_eq!(whole, parts);
        }
    }
}
