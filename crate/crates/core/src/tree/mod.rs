//! Decision trees over block inputs.
//!
//! A tree reads `k` blocks. Block `j` takes values in a finite space
//! `0..size` that carries a (product) measure and a sign `h(s) = ±1`; the
//! target function is `f(s_1, ..., s_k) = Π h(s_j)`. A query node maps each
//! value of its block to a child. Noisy queries are handled by folding the
//! noise into the block value: an xnd block value is `(x, z_0, z_1, ...)`
//! weighted by `μ(x) · Π Bin(z_λ)`, and a query reading `x ⊕ z_λ` is an
//! ordinary deterministic function of it.
//!
//! Children that no block value maps to may be omitted (`None`); subtrees are
//! shared through `Arc`, so the copies made by rearrangement are cheap.

mod io;
pub mod rearrange;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::RngStream;

pub use io::{read_tree, write_tree};
pub use rearrange::{
    collapse_to_read_once, is_rearrangement_of, merge_superqueries, move_to_root, reorder,
    MoveToRoot, ReorderCase, ReorderReport, ReorderStep,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("tree is not oblivious")]
    NotOblivious,
    #[error("tree is not ordered")]
    NotOrdered,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("tree would exceed {cap} nodes")]
    TreeCap { cap: usize },
    #[error("rearrangement did not finish within {0} iterations")]
    NoProgress(usize),
    #[error("tree file: {0}")]
    Format(String),
}

/// Value space of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpace {
    pub weights: Vec<f64>,
    pub signs: Vec<f64>,
}

impl BlockSpace {
    pub fn new(weights: Vec<f64>, signs: Vec<f64>) -> Result<Self, TreeError> {
        let b = BlockSpace { weights, signs };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<(), TreeError> {
        if self.weights.is_empty() || self.weights.len() != self.signs.len() {
            return Err(TreeError::Invalid(format!(
                "block space with {} weights and {} signs",
                self.weights.len(),
                self.signs.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(TreeError::Invalid("negative block weight".into()));
        }
        if self.signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(TreeError::Invalid("block signs must be +1 or -1".into()));
        }
        Ok(())
    }

    /// One-point block with `h = +1`.
    pub fn trivial() -> Self {
        BlockSpace {
            weights: vec![1.0],
            signs: vec![1.0],
        }
    }

    /// `x ∈ {0,1}^n` with law `mu` (indexed by `x`) and `h(x) = (−1)^{⊕x}`.
    pub fn parity(mu: &[f64]) -> Self {
        BlockSpace {
            weights: mu.to_vec(),
            signs: (0..mu.len()).map(|x| parity_sign(x as u64)).collect(),
        }
    }

    /// Block value `s = x | z_0 << n | z_1 << 2n | ...` with `copies` noise
    /// vectors of iid Bernoulli(`eps`) coordinates and `h(s) = (−1)^{⊕x}`.
    pub fn xnd(mu: &[f64], n: usize, copies: usize, eps: f64) -> Self {
        assert_eq!(mu.len(), 1 << n, "mu must cover {{0,1}}^n");
        let noise_bits = n * copies;
        let size = 1usize << (n + noise_bits);
        let mut weights = Vec::with_capacity(size);
        let mut signs = Vec::with_capacity(size);
        for s in 0..size {
            let x = s & ((1 << n) - 1);
            let z = (s >> n) as u64;
            let ones = z.count_ones() as i32;
            let noise = eps.powi(ones) * (1.0 - eps).powi(noise_bits as i32 - ones);
            weights.push(mu[x] * noise);
            signs.push(parity_sign(x as u64));
        }
        BlockSpace { weights, signs }
    }

    pub fn size(&self) -> usize {
        self.weights.len()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `adv_{h,μ}(g)` of a query `func` on this block: `Σ_c |E[h · 1{g = c}]|`
    /// under the normalised weights.
    pub fn query_advantage(&self, func: &[u32], arity: usize) -> f64 {
        let mut acc = vec![0.0; arity];
        for (s, &c) in func.iter().enumerate() {
            acc[c as usize] += self.weights[s] * self.signs[s];
        }
        acc.iter().map(|a| a.abs()).sum::<f64>() / self.total()
    }
}

pub(crate) fn parity_sign(x: u64) -> f64 {
    if x.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub block: usize,
    /// Noise index of an xnd query (informational).
    pub lambda: Option<usize>,
    /// Child index for each block value.
    pub func: Arc<Vec<u32>>,
    pub children: Vec<Option<Arc<Node>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Leaf,
    Query(Query),
}

impl Node {
    pub fn query(&self) -> Option<&Query> {
        match self {
            Node::Leaf => None,
            Node::Query(q) => Some(q),
        }
    }

    pub fn new_query(
        block: usize,
        lambda: Option<usize>,
        func: Vec<u32>,
        children: Vec<Option<Arc<Node>>>,
    ) -> Arc<Node> {
        Arc::new(Node::Query(Query {
            block,
            lambda,
            func: Arc::new(func),
            children,
        }))
    }

    /// Depth measured along the first present child.
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf => 0,
            Node::Query(q) => {
                1 + q
                    .children
                    .iter()
                    .flatten()
                    .next()
                    .map_or(0, |c| c.depth())
            }
        }
    }
}

/// Probability and signed mass `E[f · 1{leaf}]` of one reachable leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafMass {
    pub path: Vec<u32>,
    pub prob: f64,
    pub signed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    blocks: Vec<BlockSpace>,
    root: Arc<Node>,
}

impl DecisionTree {
    pub fn new(blocks: Vec<BlockSpace>, root: Arc<Node>) -> Result<Self, TreeError> {
        let t = DecisionTree { blocks, root };
        t.validate()?;
        Ok(t)
    }

    pub(crate) fn from_parts(blocks: Vec<BlockSpace>, root: Arc<Node>) -> Self {
        DecisionTree { blocks, root }
    }

    fn validate(&self) -> Result<(), TreeError> {
        for b in &self.blocks {
            b.validate()?;
            if !(b.total() > 0.0) {
                return Err(TreeError::Invalid("block with zero total weight".into()));
            }
        }
        let depth = self.root.depth();
        check_node(&self.root, &self.blocks, depth)
    }

    pub fn blocks(&self) -> &[BlockSpace] {
        &self.blocks
    }

    pub fn root(&self) -> &Arc<Node> {
        &self.root
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Number of nodes counting shared subtrees once per occurrence.
    pub fn node_count(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf => 1,
                Node::Query(q) => 1 + q.children.iter().flatten().map(|c| count(c)).sum::<usize>(),
            }
        }
        count(&self.root)
    }

    /// Normalised prior weights of every block.
    pub fn prior(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| b.weights.clone()).collect()
    }

    /// Block queried at each level, or `None` if the tree is not oblivious.
    pub fn level_blocks(&self) -> Option<Vec<usize>> {
        level_blocks(&self.root)
    }

    pub fn is_oblivious(&self) -> bool {
        self.level_blocks().is_some()
    }

    pub fn is_ordered(&self) -> bool {
        match self.level_blocks() {
            Some(lv) => runs(&lv).len() == distinct(&lv),
            None => false,
        }
    }

    /// Every block is queried on exactly one level.
    pub fn is_read_once(&self) -> bool {
        match self.level_blocks() {
            Some(lv) => {
                let mut seen = vec![0usize; self.blocks.len()];
                for b in lv {
                    seen[b] += 1;
                }
                seen.iter().all(|&c| c == 1)
            }
            None => false,
        }
    }

    /// Levels queried per block (oblivious trees).
    pub fn queries_per_block(&self) -> Result<Vec<usize>, TreeError> {
        let lv = self.level_blocks().ok_or(TreeError::NotOblivious)?;
        let mut c = vec![0; self.blocks.len()];
        for b in lv {
            c[b] += 1;
        }
        Ok(c)
    }

    /// Levels (1-based, root at level 1) whose block was queried before but
    /// not at the preceding level.
    pub fn alternations(&self) -> Result<Vec<usize>, TreeError> {
        let lv = self.level_blocks().ok_or(TreeError::NotOblivious)?;
        Ok(alternation_levels(&lv))
    }

    /// Leaf reached when block `j` takes value `values[j]`.
    pub fn evaluate(&self, values: &[usize]) -> Vec<u32> {
        let mut path = Vec::new();
        let mut node = &self.root;
        while let Node::Query(q) = node.as_ref() {
            let c = q.func[values[q.block]];
            path.push(c);
            node = q.children[c as usize]
                .as_ref()
                .expect("validated trees map only to present children");
        }
        path
    }

    /// Draws one value per block from the block measures.
    pub fn sample_values(&self, rng: &mut RngStream) -> Vec<usize> {
        self.blocks
            .iter()
            .map(|b| {
                let total = b.total();
                let probs: Vec<f64> = b.weights.iter().map(|w| w / total).collect();
                rng.categorical(&probs)
            })
            .collect()
    }

    /// Reachable leaves under the prior, normalised.
    pub fn leaf_masses(&self) -> Vec<LeafMass> {
        let norm: f64 = self.blocks.iter().map(|b| b.total()).product();
        let mut out = leaf_masses_with(&self.root, &self.blocks, self.prior());
        for m in &mut out {
            m.prob /= norm;
            m.signed /= norm;
        }
        out
    }

    /// Exact `adv_{f,μ}` of the tree: `Σ_leaf |E[f · 1{leaf}]|`.
    pub fn advantage(&self) -> f64 {
        self.leaf_masses().iter().map(|m| m.signed.abs()).sum()
    }

    /// Optimal leaf weighting `sign(E[f · 1{leaf}])`.
    pub fn optimal_weighting(&self) -> HashMap<Vec<u32>, f64> {
        self.leaf_masses()
            .into_iter()
            .map(|m| (m.path, sign(m.signed)))
            .collect()
    }

    /// `(level, block, advantage)` of every query node, by depth-first order.
    pub fn query_advantages(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        visit_nodes(&self.root, 0, &mut |level, q| {
            out.push((
                level,
                q.block,
                self.blocks[q.block].query_advantage(&q.func, q.children.len()),
            ));
        });
        out
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_node(node: &Node, blocks: &[BlockSpace], depth: usize) -> Result<(), TreeError> {
    match node {
        Node::Leaf if depth == 0 => Ok(()),
        Node::Leaf => Err(TreeError::Invalid("unbalanced tree".into())),
        Node::Query(_) if depth == 0 => Err(TreeError::Invalid("unbalanced tree".into())),
        Node::Query(q) => {
            let b = blocks.get(q.block).ok_or_else(|| {
                TreeError::Invalid(format!("query on block {} of {}", q.block, blocks.len()))
            })?;
            if q.func.len() != b.size() {
                return Err(TreeError::Invalid(format!(
                    "function has {} entries, block {} has {} values",
                    q.func.len(),
                    q.block,
                    b.size()
                )));
            }
            for &c in q.func.iter() {
                match q.children.get(c as usize) {
                    Some(Some(_)) => {}
                    _ => {
                        return Err(TreeError::Invalid(format!(
                            "function maps to missing child {c}"
                        )))
                    }
                }
            }
            for c in q.children.iter().flatten() {
                check_node(c, blocks, depth - 1)?;
            }
            Ok(())
        }
    }
}

pub(crate) fn visit_nodes<F: FnMut(usize, &Query)>(node: &Node, level: usize, f: &mut F) {
    if let Node::Query(q) = node {
        f(level, q);
        for c in q.children.iter().flatten() {
            visit_nodes(c, level + 1, f);
        }
    }
}

pub(crate) fn level_blocks(root: &Node) -> Option<Vec<usize>> {
    let mut levels: Vec<usize> = Vec::new();
    let mut ok = true;
    visit_nodes(root, 0, &mut |level, q| {
        if level == levels.len() {
            levels.push(q.block);
        } else if levels[level] != q.block {
            ok = false;
        }
    });
    ok.then_some(levels)
}

/// Maximal runs of equal blocks: `(block, start, len)`.
pub(crate) fn runs(levels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &b) in levels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.0 == b => r.2 += 1,
            _ => out.push((b, i, 1)),
        }
    }
    out
}

fn distinct(levels: &[usize]) -> usize {
    let mut v = levels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

pub(crate) fn alternation_levels(levels: &[usize]) -> Vec<usize> {
    (2..levels.len())
        .filter(|&l| levels[l] != levels[l - 1] && levels[..l - 1].contains(&levels[l]))
        .map(|l| l + 1)
        .collect()
}

/// Reachable leaves of `root` under unnormalised block weights `w`.
pub(crate) fn leaf_masses_with(
    root: &Node,
    blocks: &[BlockSpace],
    mut w: Vec<Vec<f64>>,
) -> Vec<LeafMass> {
    let mut out = Vec::new();
    let mut path = Vec::new();
    if w.iter().all(|wj| wj.iter().sum::<f64>() > 0.0) {
        masses_rec(root, blocks, &mut w, &mut path, &mut out);
    }
    out
}

fn masses_rec(
    node: &Node,
    blocks: &[BlockSpace],
    w: &mut Vec<Vec<f64>>,
    path: &mut Vec<u32>,
    out: &mut Vec<LeafMass>,
) {
    match node {
        Node::Leaf => {
            let mut prob = 1.0;
            let mut signed = 1.0;
            for (wj, b) in w.iter().zip(blocks) {
                prob *= wj.iter().sum::<f64>();
                signed *= wj.iter().zip(&b.signs).map(|(a, s)| a * s).sum::<f64>();
            }
            out.push(LeafMass {
                path: path.clone(),
                prob,
                signed,
            });
        }
        Node::Query(q) => {
            let saved = w[q.block].clone();
            for (c, child) in q.children.iter().enumerate() {
                let Some(child) = child else { continue };
                let masked: Vec<f64> = saved
                    .iter()
                    .zip(q.func.iter())
                    .map(|(&x, &g)| if g as usize == c { x } else { 0.0 })
                    .collect();
                if masked.iter().sum::<f64>() <= 0.0 {
                    continue;
                }
                w[q.block] = masked;
                path.push(c as u32);
                masses_rec(child, blocks, w, path, out);
                path.pop();
            }
            w[q.block] = saved;
        }
    }
}
