//! Random selective networks for tests, examples and benchmarks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{NodeId, NodeKind, Polarity, SpnBuilder, SpnGraph};

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub num_vars: usize,
    pub scale: u128,
    /// Chance that a multi-variable scope becomes a split sum instead of a
    /// product over a random partition.
    pub split_prob: f64,
    /// Chance that both branches of a split share one sub-network.
    pub share_prob: f64,
}

impl GeneratorConfig {
    pub fn new(num_vars: usize, scale: u128) -> Self {
        Self {
            num_vars,
            scale,
            split_prob: 0.5,
            share_prob: 0.5,
        }
    }
}

struct Gen<'a, R> {
    cfg: &'a GeneratorConfig,
    rng: &'a mut R,
    b: SpnBuilder,
    leaves: BTreeMap<(usize, Polarity), NodeId>,
    sums: usize,
    products: usize,
}

impl<R: Rng> Gen<'_, R> {
    fn leaf(&mut self, var: usize, polarity: Polarity) -> NodeId {
        if let Some(&id) = self.leaves.get(&(var, polarity)) {
            return id;
        }
        let name = match polarity {
            Polarity::Positive => format!("X{var}"),
            Polarity::Negated => format!("NX{var}"),
        };
        let id = self.b.leaf(name, var, polarity);
        self.leaves.insert((var, polarity), id);
        id
    }

    fn sum2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.cfg.scale;
        let w = self.rng.gen_range(0..=d);
        self.sums += 1;
        self.b.sum(format!("S{}", self.sums), &[(a, w), (b, d - w)])
    }

    fn product(&mut self, children: &[NodeId]) -> NodeId {
        self.products += 1;
        self.b.product(format!("P{}", self.products), children)
    }

    fn build(&mut self, scope: &[usize]) -> NodeId {
        if let [v] = scope {
            let pos = self.leaf(*v, Polarity::Positive);
            let neg = self.leaf(*v, Polarity::Negated);
            return self.sum2(pos, neg);
        }
        if self.rng.gen_bool(self.cfg.split_prob) {
            // A split on `v`: each branch fixes one polarity of `v`, so at
            // most one branch is positive for any row.
            let v = *scope.choose(self.rng).expect("non-empty scope");
            let rest: Vec<usize> = scope.iter().copied().filter(|&x| x != v).collect();
            let left = self.build(&rest);
            let right = if self.rng.gen_bool(self.cfg.share_prob) {
                left
            } else {
                self.build(&rest)
            };
            let pos = self.leaf(v, Polarity::Positive);
            let neg = self.leaf(v, Polarity::Negated);
            let a = self.product(&[pos, left]);
            let b = self.product(&[neg, right]);
            self.sum2(a, b)
        } else {
            let mut vars = scope.to_vec();
            vars.shuffle(self.rng);
            let cut = self.rng.gen_range(1..vars.len());
            let (l, r) = vars.split_at(cut);
            let (l, r) = (l.to_vec(), r.to_vec());
            let a = self.build(&l);
            let b = self.build(&r);
            self.product(&[a, b])
        }
    }
}

/// A complete, decomposable and selective network over `num_vars` variables.
pub fn random_selective<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> SpnGraph {
    assert!(cfg.num_vars > 0, "at least one variable");
    let mut g = Gen {
        cfg,
        rng,
        b: SpnBuilder::new(),
        leaves: BTreeMap::new(),
        sums: 0,
        products: 0,
    };
    let scope: Vec<usize> = (0..cfg.num_vars).collect();
    let root = g.build(&scope);
    g.b.build(root, cfg.num_vars, cfg.scale)
        .expect("generated network is well formed")
}

/// Draws rows by ancestral sampling: a sum picks one child with probability
/// proportional to its weight, a product visits every child, a leaf fixes
/// its variable. Variables outside the root's scope are uniform.
pub fn sample_rows<R: Rng>(spn: &SpnGraph, count: usize, rng: &mut R) -> Vec<Vec<bool>> {
    (0..count)
        .map(|_| {
            let mut row: Vec<Option<bool>> = vec![None; spn.num_vars()];
            let mut stack = vec![spn.root()];
            while let Some(i) = stack.pop() {
                match &spn.node(i).kind {
                    NodeKind::Leaf { var, polarity } => {
                        row[*var] = Some(*polarity == Polarity::Positive)
                    }
                    NodeKind::Product { children } => stack.extend(children),
                    NodeKind::Sum { children } => {
                        let mut pick = rng.gen_range(0..spn.scale());
                        let (c, _) = children
                            .iter()
                            .find(|(_, w)| {
                                let hit = pick < *w;
                                pick = pick.saturating_sub(*w);
                                hit
                            })
                            .unwrap_or(&children[children.len() - 1]);
                        stack.push(*c);
                    }
                }
            }
            row.into_iter()
                .map(|v| v.unwrap_or_else(|| rng.gen()))
                .collect()
        })
        .collect()
}
