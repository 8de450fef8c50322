//! Sum-product networks over binary indicator leaves.
//!
//! Weights are stored in fixed point: a sum node's weights are integers that
//! add up to the network's scale `d`, so weight `w` stands for `w / d`.

mod generate;
mod io;
mod learn;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

pub use generate::{random_selective, sample_rows, GeneratorConfig};
pub use io::{
    load_dataset, load_structure, parse_dataset, parse_structure, save_dataset, save_structure,
    write_dataset, write_structure, ParseError,
};
pub use learn::{
    check_selectivity, count_contributions, largest_remainder, oracle_learn, positivity,
    LearnedWeights, SelectivityViolation, SumEdgeCounts,
};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    /// The indicator `X`.
    Positive,
    /// The complement indicator `X̄`.
    Negated,
}

impl Polarity {
    /// Index into a `[positive, negated]` pair.
    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negated => 1,
        }
    }

    /// Whether the indicator is on for the observed bit.
    pub fn matches(self, bit: bool) -> bool {
        match self {
            Polarity::Positive => bit,
            Polarity::Negated => !bit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Sum { children: Vec<(NodeId, u128)> },
    Product { children: Vec<NodeId> },
    Leaf { var: usize, polarity: Polarity },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpnNode {
    pub name: String,
    pub kind: NodeKind,
}

impl SpnNode {
    pub fn children(&self) -> Vec<NodeId> {
        match &self.kind {
            NodeKind::Sum { children } => children.iter().map(|(c, _)| *c).collect(),
            NodeKind::Product { children } => children.clone(),
            NodeKind::Leaf { .. } => Vec::new(),
        }
    }

    pub fn is_sum(&self) -> bool {
        matches!(self.kind, NodeKind::Sum { .. })
    }
}

/// Errors that make a node list unusable as a network at all.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructureError {
    #[error("root index {0} is out of range")]
    BadRoot(NodeId),
    #[error("node {node} refers to missing child {child}")]
    DanglingChild { node: String, child: NodeId },
    #[error("node {0} has no children")]
    Childless(String),
    #[error("leaf {node} uses variable {var} but the network has {vars}")]
    BadVariable {
        node: String,
        var: usize,
        vars: usize,
    },
    #[error("the graph has a cycle through {0}")]
    Cycle(String),
    #[error("duplicate node name {0}")]
    DuplicateName(String),
    #[error("scale must be at least 1")]
    BadScale,
}

/// Structural property a violation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    Reachability,
    Completeness,
    Decomposability,
    Weights,
    DuplicateEdge,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Reachability => "reachability",
            Property::Completeness => "completeness",
            Property::Decomposability => "decomposability",
            Property::Weights => "weights",
            Property::DuplicateEdge => "duplicate edge",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub node: String,
    pub property: Property,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.node, self.property, self.detail)
    }
}

/// Table-style structure statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Stats {
    pub vars: usize,
    pub sum: usize,
    pub product: usize,
    pub leaf: usize,
    /// One weight per sum edge plus one distribution parameter per leaf.
    pub params: usize,
    pub edges: usize,
    /// Nodes on the longest root-to-leaf path.
    pub layers: usize,
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sum {}, product {}, leaf {} (of {} variables), params {}, edges {}, layers {}",
            self.sum, self.product, self.leaf, self.vars, self.params, self.edges, self.layers
        )
    }
}

/// Per-variable leaf values `[positive, negated]`.
pub type LeafValues<T> = Vec<[T; 2]>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpnGraph {
    nodes: Vec<SpnNode>,
    root: NodeId,
    num_vars: usize,
    scale: u128,
    /// Children before parents.
    order: Vec<NodeId>,
    scopes: Vec<BTreeSet<usize>>,
}

impl SpnGraph {
    pub fn new(
        nodes: Vec<SpnNode>,
        root: NodeId,
        num_vars: usize,
        scale: u128,
    ) -> Result<Self, StructureError> {
        if scale == 0 {
            return Err(StructureError::BadScale);
        }
        if root >= nodes.len() {
            return Err(StructureError::BadRoot(root));
        }
        let mut names = BTreeSet::new();
        for node in &nodes {
            if !names.insert(node.name.as_str()) {
                return Err(StructureError::DuplicateName(node.name.clone()));
            }
            match &node.kind {
                NodeKind::Leaf { var, .. } if *var >= num_vars => {
                    return Err(StructureError::BadVariable {
                        node: node.name.clone(),
                        var: *var,
                        vars: num_vars,
                    })
                }
                NodeKind::Leaf { .. } => {}
                _ => {
                    let children = node.children();
                    if children.is_empty() {
                        return Err(StructureError::Childless(node.name.clone()));
                    }
                    if let Some(&c) = children.iter().find(|&&c| c >= nodes.len()) {
                        return Err(StructureError::DanglingChild {
                            node: node.name.clone(),
                            child: c,
                        });
                    }
                }
            }
        }
        let order = topological_order(&nodes)?;
        let mut scopes = vec![BTreeSet::new(); nodes.len()];
        for &i in &order {
            scopes[i] = match &nodes[i].kind {
                NodeKind::Leaf { var, .. } => BTreeSet::from([*var]),
                _ => nodes[i]
                    .children()
                    .iter()
                    .flat_map(|&c| scopes[c].iter().copied())
                    .collect(),
            };
        }
        Ok(Self {
            nodes,
            root,
            num_vars,
            scale,
            order,
            scopes,
        })
    }

    pub fn nodes(&self) -> &[SpnNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &SpnNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn scale(&self) -> u128 {
        self.scale
    }

    pub fn scope(&self, id: NodeId) -> &BTreeSet<usize> {
        &self.scopes[id]
    }

    /// Node ids with every child before its parents.
    pub fn bottom_up(&self) -> &[NodeId] {
        &self.order
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Sum nodes in bottom-up order with their weighted children.
    pub fn sum_nodes(&self) -> impl Iterator<Item = (NodeId, &[(NodeId, u128)])> {
        self.order
            .iter()
            .filter_map(|&i| match &self.nodes[i].kind {
                NodeKind::Sum { children } => Some((i, children.as_slice())),
                _ => None,
            })
    }

    /// Nodes reachable from the root.
    pub fn reachable(&self) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            if seen.insert(i) {
                stack.extend(self.nodes[i].children());
            }
        }
        seen
    }

    /// Checks completeness, decomposability, reachability and weights.
    ///
    /// Weights must be non-negative (guaranteed by the type) and sum to the
    /// scale within one unit per child.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |node: &SpnNode, property, detail: String| {
            out.push(Violation {
                node: node.name.clone(),
                property,
                detail,
            })
        };
        let reachable = self.reachable();
        for (i, node) in self.nodes.iter().enumerate() {
            if !reachable.contains(&i) {
                push(
                    node,
                    Property::Reachability,
                    "not reachable from the root".into(),
                );
            }
            let children = node.children();
            let distinct: BTreeSet<NodeId> = children.iter().copied().collect();
            if distinct.len() != children.len() {
                push(
                    node,
                    Property::DuplicateEdge,
                    "a child is listed twice".into(),
                );
            }
            match &node.kind {
                NodeKind::Sum { children } => {
                    let first = &self.scopes[children[0].0];
                    for (c, _) in &children[1..] {
                        if &self.scopes[*c] != first {
                            push(
                                node,
                                Property::Completeness,
                                format!(
                                    "child {} has scope {:?}, child {} has {:?}",
                                    self.nodes[children[0].0].name,
                                    first,
                                    self.nodes[*c].name,
                                    self.scopes[*c]
                                ),
                            );
                        }
                    }
                    let total: u128 = children.iter().map(|(_, w)| *w).sum();
                    let slack = children.len() as u128;
                    if total + slack < self.scale || total > self.scale + slack {
                        push(
                            node,
                            Property::Weights,
                            format!("weights sum to {total}, expected {}", self.scale),
                        );
                    }
                }
                NodeKind::Product { children } => {
                    let mut seen = BTreeSet::new();
                    for c in children {
                        if let Some(v) = self.scopes[*c].iter().find(|v| seen.contains(*v)) {
                            push(
                                node,
                                Property::Decomposability,
                                format!("variable {v} appears under two children"),
                            );
                            break;
                        }
                        seen.extend(self.scopes[*c].iter().copied());
                    }
                }
                NodeKind::Leaf { .. } => {}
            }
        }
        out
    }

    pub fn stats(&self) -> Stats {
        let mut s = Stats {
            vars: self.num_vars,
            sum: 0,
            product: 0,
            leaf: 0,
            params: 0,
            edges: 0,
            layers: self.layers(),
        };
        for node in &self.nodes {
            s.edges += node.children().len();
            match &node.kind {
                NodeKind::Sum { children } => {
                    s.sum += 1;
                    s.params += children.len();
                }
                NodeKind::Product { .. } => s.product += 1,
                NodeKind::Leaf { .. } => {
                    s.leaf += 1;
                    s.params += 1;
                }
            }
        }
        s
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn layers(&self) -> usize {
        let mut height = vec![0usize; self.nodes.len()];
        for &i in &self.order {
            height[i] = 1 + self.nodes[i]
                .children()
                .iter()
                .map(|&c| height[c])
                .max()
                .unwrap_or(0);
        }
        height[self.root]
    }

    /// Value of every node, with weights read as `w / scale`.
    pub fn evaluate_all(&self, leaves: &LeafValues<f64>) -> Result<Vec<f64>, StructureError> {
        if leaves.len() != self.num_vars {
            return Err(StructureError::BadVariable {
                node: "leaf values".into(),
                var: leaves.len(),
                vars: self.num_vars,
            });
        }
        let d = self.scale as f64;
        let mut value = vec![0.0; self.nodes.len()];
        for &i in &self.order {
            value[i] = match &self.nodes[i].kind {
                NodeKind::Leaf { var, polarity } => leaves[*var][polarity.index()],
                NodeKind::Sum { children } => children
                    .iter()
                    .map(|(c, w)| *w as f64 / d * value[*c])
                    .sum(),
                NodeKind::Product { children } => children.iter().map(|c| value[*c]).product(),
            };
        }
        Ok(value)
    }

    pub fn evaluate(&self, leaves: &LeafValues<f64>) -> Result<f64, StructureError> {
        Ok(self.evaluate_all(leaves)?[self.root])
    }

    /// Same network with new weights per sum node (in child order).
    pub fn with_weights(&self, weights: &BTreeMap<NodeId, Vec<u128>>) -> Self {
        let mut next = self.clone();
        for (id, ws) in weights {
            if let NodeKind::Sum { children } = &mut next.nodes[*id].kind {
                for ((_, w), new) in children.iter_mut().zip(ws) {
                    *w = *new;
                }
            }
        }
        next
    }

    /// Current weights of every sum node.
    pub fn weights(&self) -> BTreeMap<NodeId, Vec<u128>> {
        self.sum_nodes()
            .map(|(i, ch)| (i, ch.iter().map(|(_, w)| *w).collect()))
            .collect()
    }
}

fn topological_order(nodes: &[SpnNode]) -> Result<Vec<NodeId>, StructureError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; nodes.len()];
    let mut order = Vec::with_capacity(nodes.len());
    for start in 0..nodes.len() {
        if mark[start] != Mark::New {
            continue;
        }
        // Iterative DFS: (node, next child position).
        let mut stack = vec![(start, 0usize)];
        mark[start] = Mark::Active;
        while let Some((i, pos)) = stack.pop() {
            let children = nodes[i].children();
            if pos < children.len() {
                stack.push((i, pos + 1));
                let c = children[pos];
                match mark[c] {
                    Mark::New => {
                        mark[c] = Mark::Active;
                        stack.push((c, 0));
                    }
                    Mark::Active => return Err(StructureError::Cycle(nodes[c].name.clone())),
                    Mark::Done => {}
                }
            } else {
                mark[i] = Mark::Done;
                order.push(i);
            }
        }
    }
    Ok(order)
}

/// Incremental construction by name.
#[derive(Debug, Default)]
pub struct SpnBuilder {
    nodes: Vec<SpnNode>,
}

impl SpnBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: impl Into<String>, kind: NodeKind) -> NodeId {
        self.nodes.push(SpnNode {
            name: name.into(),
            kind,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, name: impl Into<String>, var: usize, polarity: Polarity) -> NodeId {
        self.push(name, NodeKind::Leaf { var, polarity })
    }

    pub fn sum(&mut self, name: impl Into<String>, children: &[(NodeId, u128)]) -> NodeId {
        self.push(
            name,
            NodeKind::Sum {
                children: children.to_vec(),
            },
        )
    }

    pub fn product(&mut self, name: impl Into<String>, children: &[NodeId]) -> NodeId {
        self.push(
            name,
            NodeKind::Product {
                children: children.to_vec(),
            },
        )
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn build(
        self,
        root: NodeId,
        num_vars: usize,
        scale: u128,
    ) -> Result<SpnGraph, StructureError> {
        SpnGraph::new(self.nodes, root, num_vars, scale)
    }
}

/// The two-variable example network, weights at scale 1000.
pub fn example_network() -> SpnGraph {
    let mut b = SpnBuilder::new();
    let x1 = b.leaf("X1", 0, Polarity::Positive);
    let nx1 = b.leaf("NX1", 0, Polarity::Negated);
    let x2 = b.leaf("X2", 1, Polarity::Positive);
    let nx2 = b.leaf("NX2", 1, Polarity::Negated);
    let s1 = b.sum("S1", &[(x1, 300), (nx1, 700)]);
    let s2 = b.sum("S2", &[(x1, 600), (nx1, 400)]);
    let s3 = b.sum("S3", &[(x2, 200), (nx2, 800)]);
    let s4 = b.sum("S4", &[(x2, 100), (nx2, 900)]);
    let p1 = b.product("P1", &[s1, s3]);
    let p2 = b.product("P2", &[s1, s4]);
    let p3 = b.product("P3", &[s2, s4]);
    let root = b.sum("S", &[(p1, 400), (p2, 500), (p3, 100)]);
    b.build(root, 2, 1000)
        .expect("example network is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn leaves(x1: [f64; 2], x2: [f64; 2]) -> LeafValues<f64> {
        vec![x1, x2]
    }

    #[test]
    fn example_network_is_valid() {
        let spn = example_network();
        assert!(spn.validate().is_empty());
        let s = spn.stats();
        assert_eq!((s.sum, s.product, s.leaf, s.vars), (5, 3, 4, 2));
        assert_eq!(s.edges, 17);
        assert_eq!(s.params, 15);
        assert_eq!(s.layers, 4);
    }

    #[test]
    fn example_evaluations() {
        let spn = example_network();
        let all = spn.evaluate_all(&leaves([1.0, 0.0], [1.0, 0.0])).unwrap();
        let by = |n: &str| all[spn.find(n).unwrap()];
        for (name, v) in [
            ("S1", 0.3),
            ("S2", 0.6),
            ("S3", 0.2),
            ("S4", 0.1),
            ("P1", 0.06),
            ("P2", 0.03),
            ("P3", 0.06),
            ("S", 0.045),
        ] {
            assert!((by(name) - v).abs() < 1e-12, "{name}");
        }
        let marg = spn.evaluate(&leaves([1.0, 0.0], [1.0, 1.0])).unwrap();
        assert!((marg - 0.33).abs() < 1e-12);
        let full = spn.evaluate(&leaves([1.0, 1.0], [1.0, 1.0])).unwrap();
        assert!((full - 1.0).abs() < 1e-12);
    }

    #[test]
    fn structural_violations() {
        let mut b = SpnBuilder::new();
        let x = b.leaf("a", 0, Polarity::Positive);
        let y = b.leaf("b", 0, Polarity::Negated);
        let p = b.product("p", &[x, y]);
        let spn = b.build(p, 1, 10).unwrap();
        let v = spn.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].property, Property::Decomposability);

        let mut b = SpnBuilder::new();
        let x = b.leaf("a", 0, Polarity::Positive);
        let y = b.leaf("b", 1, Polarity::Positive);
        let s = b.sum("s", &[(x, 5), (y, 5)]);
        let spn = b.build(s, 2, 10).unwrap();
        assert_eq!(spn.validate()[0].property, Property::Completeness);

        let mut b = SpnBuilder::new();
        let x = b.leaf("a", 0, Polarity::Positive);
        let y = b.leaf("b", 0, Polarity::Negated);
        b.leaf("orphan", 0, Polarity::Negated);
        let s = b.sum("s", &[(x, 3), (y, 4)]);
        let spn = b.build(s, 1, 10).unwrap();
        let props: Vec<Property> = spn.validate().iter().map(|v| v.property).collect();
        assert_eq!(props, vec![Property::Reachability, Property::Weights]);
    }

    #[test]
    fn hard_errors() {
        let mut b = SpnBuilder::new();
        b.product("p", &[1]);
        b.product("q", &[0]);
        assert!(matches!(b.build(0, 1, 10), Err(StructureError::Cycle(_))));

        let mut b = SpnBuilder::new();
        b.leaf("x", 3, Polarity::Positive);
        assert!(matches!(
            b.build(0, 2, 10),
            Err(StructureError::BadVariable { .. })
        ));

        let mut b = SpnBuilder::new();
        b.product("p", &[7]);
        assert!(matches!(
            b.build(0, 1, 10),
            Err(StructureError::DanglingChild { .. })
        ));
    }

    proptest! {
        #[test]
        fn evaluation_is_linear_in_each_leaf(
            var in 0usize..2,
            pol in 0usize..2,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
            rest in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            let spn = example_network();
            let mut base = leaves([rest[0], rest[1]], [rest[2], rest[3]]);
            base[var][pol] = a;
            let fa = spn.evaluate(&base).unwrap();
            base[var][pol] = b;
            let fb = spn.evaluate(&base).unwrap();
            base[var][pol] = a + b;
            let fab = spn.evaluate(&base).unwrap();
            base[var][pol] = 0.0;
            let f0 = spn.evaluate(&base).unwrap();
            // Affine in one leaf: f(a + b) - f(0) = (f(a) - f(0)) + (f(b) - f(0)).
            prop_assert!((fab - f0 - (fa - f0) - (fb - f0)).abs() < 1e-9);
        }
    }
}
