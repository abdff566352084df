//! Rearrangement of oblivious trees: move-to-root, reordering into an
//! ordered tree, and collapsing ordered trees into read-once trees.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::Serialize;

use super::{
    alternation_levels, leaf_masses_with, level_blocks, runs, visit_nodes, BlockSpace,
    DecisionTree, Node, Query, TreeError,
};

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Present nodes at `level`, depth-first, with their paths.
fn nodes_at_level(root: &Arc<Node>, level: usize) -> Vec<(Vec<u32>, Arc<Node>)> {
    fn rec(n: &Arc<Node>, level: usize, path: &mut Vec<u32>, out: &mut Vec<(Vec<u32>, Arc<Node>)>) {
        if level == 0 {
            out.push((path.clone(), n.clone()));
            return;
        }
        if let Node::Query(q) = n.as_ref() {
            for (c, child) in q.children.iter().enumerate() {
                if let Some(child) = child {
                    path.push(c as u32);
                    rec(child, level - 1, path, out);
                    path.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    rec(root, level, &mut Vec::new(), &mut out);
    out
}

/// The first `levels` levels of `node`, with leaves below.
fn truncate(node: &Arc<Node>, levels: usize) -> Arc<Node> {
    if levels == 0 {
        return Arc::new(Node::Leaf);
    }
    match node.as_ref() {
        Node::Leaf => node.clone(),
        Node::Query(q) => Arc::new(Node::Query(Query {
            children: q
                .children
                .iter()
                .map(|c| c.as_ref().map(|c| truncate(c, levels - 1)))
                .collect(),
            ..q.clone()
        })),
    }
}

/// The first `levels` levels of `node` with `below` hung under each end.
fn graft(node: &Arc<Node>, levels: usize, below: &Arc<Node>) -> Arc<Node> {
    if levels == 0 {
        return below.clone();
    }
    match node.as_ref() {
        Node::Leaf => node.clone(),
        Node::Query(q) => Arc::new(Node::Query(Query {
            children: q
                .children
                .iter()
                .map(|c| c.as_ref().map(|c| graft(c, levels - 1, below)))
                .collect(),
            ..q.clone()
        })),
    }
}

/// Child choices made over `levels` levels from `node` when the queried
/// block takes value `s`.
fn walk_segment(node: &Node, s: usize, levels: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(levels);
    let mut n = node;
    for _ in 0..levels {
        let Node::Query(q) = n else { break };
        let c = q.func[s];
        out.push(c);
        n = q.children[c as usize].as_ref().expect("functions map to present children");
    }
    out
}

/// Block weights conditioned on following `path` from `root`.
fn weights_at(root: &Node, path: &[u32], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut w = w.to_vec();
    let mut n = root;
    for &c in path {
        let Node::Query(q) = n else { break };
        for (x, &g) in w[q.block].iter_mut().zip(q.func.iter()) {
            if g != c {
                *x = 0.0;
            }
        }
        n = q.children[c as usize].as_ref().expect("path follows present children");
    }
    w
}

struct MoveInfo {
    block: usize,
    chosen: Vec<u32>,
    betas: Vec<f64>,
    input_mass: f64,
    witness_mass: f64,
}

/// Moves the bottom `seg` levels (all querying one block that is not
/// queried above them) to the root, using unnormalised weights `w`.
fn move_node(
    root: &Arc<Node>,
    blocks: &[BlockSpace],
    w: &[Vec<f64>],
    seg: usize,
) -> Result<(Arc<Node>, MoveInfo), TreeError> {
    let levels = level_blocks(root).ok_or(TreeError::NotOblivious)?;
    let depth = levels.len();
    if seg == 0 || seg > depth {
        return Err(TreeError::Precondition(format!(
            "segment of {seg} levels in a tree of depth {depth}"
        )));
    }
    let t = depth - seg;
    let x = levels[depth - 1];
    if levels[t..].iter().any(|&b| b != x) {
        return Err(TreeError::Precondition(format!(
            "the last {seg} levels do not all query block {x}"
        )));
    }
    if levels[..t].contains(&x) {
        return Err(TreeError::Precondition(format!(
            "block {x} is also queried above the bottom levels"
        )));
    }

    let masses = leaf_masses_with(root, blocks, w.to_vec());
    let input_mass: f64 = masses.iter().map(|m| m.signed.abs()).sum();
    let b: HashMap<Vec<u32>, f64> = masses.into_iter().map(|m| (m.path, sign(m.signed))).collect();

    let ends = nodes_at_level(root, t);
    let hx = &blocks[x].signs;
    let betas: Vec<f64> = ends
        .iter()
        .map(|(path, v)| {
            (0..blocks[x].size())
                .map(|s| {
                    let mut leaf = path.clone();
                    leaf.extend(walk_segment(v, s, seg));
                    w[x][s] * hx[s] * b.get(&leaf).copied().unwrap_or(0.0)
                })
                .sum()
        })
        .collect();
    let mut best = 0;
    for (i, beta) in betas.iter().enumerate() {
        if beta.abs() > betas[best].abs() {
            best = i;
        }
    }
    let (chosen, vstar) = ends[best].clone();

    // Witness weighting sign(α(v)) · b(v*, c): its value is Σ_v |α(v)| · |β(v*)|.
    let alpha_abs: f64 = ends
        .iter()
        .map(|(path, _)| {
            let wv = weights_at(root, path, w);
            (0..blocks.len())
                .filter(|&j| j != x)
                .map(|j| wv[j].iter().zip(&blocks[j].signs).map(|(a, s)| a * s).sum::<f64>())
                .product::<f64>()
                .abs()
        })
        .sum();
    let witness_mass = alpha_abs * betas[best].abs();

    let below = truncate(root, t);
    let out = graft(&vstar, seg, &below);
    Ok((
        out,
        MoveInfo {
            block: x,
            chosen,
            betas,
            input_mass,
            witness_mass,
        },
    ))
}

/// Result of [`move_to_root`].
#[derive(Clone, Debug)]
pub struct MoveToRoot {
    pub tree: DecisionTree,
    /// Block moved to the root.
    pub block: usize,
    /// Path of the chosen node `v*` in the input tree.
    pub chosen: Vec<u32>,
    /// `β(v)` of every candidate node, depth-first (unnormalised).
    pub betas: Vec<f64>,
    pub input_advantage: f64,
    pub output_advantage: f64,
    /// Value of the witness weighting `sign(α(v)) · b(c)` on the output.
    pub witness_value: f64,
}

/// Moves the bottom `seg` levels of `tree` (one block, not queried above)
/// to the root: the subtree of `v*` (largest `|β(v)|`, first on ties) over
/// copies of the tree cut above those levels.
pub fn move_to_root(tree: &DecisionTree, seg: usize) -> Result<MoveToRoot, TreeError> {
    let (root, info) = move_node(tree.root(), tree.blocks(), &tree.prior(), seg)?;
    let norm: f64 = tree.blocks().iter().map(|b| b.total()).product();
    let out = DecisionTree::from_parts(tree.blocks().to_vec(), root);
    let output_advantage = out.advantage();
    Ok(MoveToRoot {
        tree: out,
        block: info.block,
        chosen: info.chosen,
        betas: info.betas,
        input_advantage: info.input_mass / norm,
        output_advantage,
        witness_value: info.witness_mass / norm,
    })
}

/// Rebuilds `node` with every node at `level` replaced by `f(node, w)`,
/// where `w` are the block weights conditioned on reaching it.
fn map_level<F>(
    node: &Arc<Node>,
    level: usize,
    w: Vec<Vec<f64>>,
    f: &mut F,
) -> Result<Arc<Node>, TreeError>
where
    F: FnMut(&Arc<Node>, &[Vec<f64>]) -> Result<Arc<Node>, TreeError>,
{
    if level == 0 {
        return f(node, &w);
    }
    match node.as_ref() {
        Node::Leaf => Ok(node.clone()),
        Node::Query(q) => {
            let mut children = Vec::with_capacity(q.children.len());
            for (c, child) in q.children.iter().enumerate() {
                children.push(match child {
                    None => None,
                    Some(child) => {
                        let mut wc = w.clone();
                        for (x, &g) in wc[q.block].iter_mut().zip(q.func.iter()) {
                            if g as usize != c {
                                *x = 0.0;
                            }
                        }
                        Some(map_level(child, level - 1, wc, f)?)
                    }
                });
            }
            Ok(Arc::new(Node::Query(Query {
                children,
                ..q.clone()
            })))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReorderCase {
    /// The last run's block is queried nowhere else: move it to the root.
    Rotate,
    /// The last run repeats an earlier block: move it up next to the
    /// previous run of that block.
    Alternation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReorderStep {
    pub case: ReorderCase,
    /// 0-based level whose subtrees were rearranged.
    pub level: usize,
    pub alternations_before: usize,
    pub advantage_after: f64,
}

#[derive(Clone, Debug)]
pub struct ReorderReport {
    pub tree: DecisionTree,
    pub steps: Vec<ReorderStep>,
    pub input_advantage: f64,
}

/// Rearranges an oblivious tree into an ordered one by repeated
/// move-to-root steps. The advantage never decreases.
pub fn reorder(tree: &DecisionTree) -> Result<ReorderReport, TreeError> {
    let blocks = tree.blocks().to_vec();
    let mut root = tree.root().clone();
    let depth = tree.depth();
    let cap = (blocks.len() * depth).pow(2).max(1);
    let mut steps = Vec::new();
    loop {
        let levels = level_blocks(&root).ok_or(TreeError::NotOblivious)?;
        let alternations = alternation_levels(&levels).len();
        if alternations == 0 {
            break;
        }
        if steps.len() >= cap {
            return Err(TreeError::NoProgress(cap));
        }
        let rs = runs(&levels);
        let &(x, _, len) = rs.last().expect("a tree with alternations has runs");
        let (case, level) = match rs[..rs.len() - 1].iter().rposition(|r| r.0 == x) {
            Some(p) => (ReorderCase::Alternation, rs[p + 1].1),
            None => (ReorderCase::Rotate, 0),
        };
        root = map_level(&root, level, tree.prior(), &mut |node, w| {
            move_node(node, &blocks, w, len).map(|(n, _)| n)
        })?;
        let advantage_after = DecisionTree::from_parts(blocks.clone(), root.clone()).advantage();
        steps.push(ReorderStep {
            case,
            level,
            alternations_before: alternations,
            advantage_after,
        });
    }
    Ok(ReorderReport {
        tree: DecisionTree::from_parts(blocks, root),
        steps,
        input_advantage: tree.advantage(),
    })
}

fn level_arities(root: &Node) -> Result<Vec<usize>, TreeError> {
    let mut arities: Vec<usize> = Vec::new();
    let mut ok = true;
    visit_nodes(root, 0, &mut |level, q| {
        if level == arities.len() {
            arities.push(q.children.len());
        } else if arities[level] != q.children.len() {
            ok = false;
        }
    });
    if ok {
        Ok(arities)
    } else {
        Err(TreeError::Precondition("arity varies within a level".into()))
    }
}

fn merge_rec(
    node: &Arc<Node>,
    rs: &[(usize, usize, usize)],
    arities: &[usize],
) -> Arc<Node> {
    let Node::Query(q) = node.as_ref() else {
        return node.clone();
    };
    let (_, start, len) = rs[0];
    let radix = &arities[start..start + len];
    let arity: usize = radix.iter().product();
    let mut ends: HashMap<usize, Arc<Node>> = HashMap::new();
    let func: Vec<u32> = (0..q.func.len())
        .map(|s| {
            let mut n = node;
            let mut idx = 0usize;
            let mut mult = 1usize;
            for &a in radix {
                let Node::Query(qq) = n.as_ref() else { break };
                let c = qq.func[s] as usize;
                idx += c * mult;
                mult *= a;
                n = qq.children[c].as_ref().expect("functions map to present children");
            }
            ends.entry(idx).or_insert_with(|| n.clone());
            idx as u32
        })
        .collect();
    let mut children: Vec<Option<Arc<Node>>> = vec![None; arity];
    for (idx, end) in ends {
        children[idx] = Some(merge_rec(&end, &rs[1..], arities));
    }
    Arc::new(Node::Query(Query {
        block: q.block,
        lambda: None,
        func: Arc::new(func),
        children,
    }))
}

/// Merges each maximal run of same-block levels into one superquery whose
/// outcome is the mixed-radix index of the run's child choices (first
/// level least significant). Requires uniform arity within each level.
pub fn merge_superqueries(tree: &DecisionTree) -> Result<DecisionTree, TreeError> {
    let levels = tree.level_blocks().ok_or(TreeError::NotOblivious)?;
    let arities = level_arities(tree.root())?;
    let rs = runs(&levels);
    let root = if rs.is_empty() {
        tree.root().clone()
    } else {
        merge_rec(tree.root(), &rs, &arities)
    };
    Ok(DecisionTree::from_parts(tree.blocks().to_vec(), root))
}

/// Collapses an ordered tree into a read-once tree (one superquery per
/// queried block).
pub fn collapse_to_read_once(tree: &DecisionTree) -> Result<DecisionTree, TreeError> {
    if !tree.is_oblivious() {
        return Err(TreeError::NotOblivious);
    }
    if !tree.is_ordered() {
        return Err(TreeError::NotOrdered);
    }
    merge_superqueries(tree)
}

/// Children relabelled in order of first appearance.
fn canonical(func: &[u32]) -> Vec<u32> {
    let mut map: HashMap<u32, u32> = HashMap::new();
    func.iter()
        .map(|c| {
            let next = map.len() as u32;
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

/// Whether `out` is a rearrangement of `input`: same per-block query
/// counts, and every query function of `out` labels some node of `input`
/// on the same block up to renaming of children.
pub fn is_rearrangement_of(out: &DecisionTree, input: &DecisionTree) -> bool {
    let (Ok(a), Ok(b)) = (out.queries_per_block(), input.queries_per_block()) else {
        return false;
    };
    if a != b {
        return false;
    }
    let mut known: HashSet<(usize, usize, Vec<u32>)> = HashSet::new();
    visit_nodes(input.root(), 0, &mut |_, q| {
        known.insert((q.block, q.children.len(), canonical(&q.func)));
    });
    let mut ok = true;
    visit_nodes(out.root(), 0, &mut |_, q| {
        ok &= known.contains(&(q.block, q.children.len(), canonical(&q.func)));
    });
    ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf() -> Arc<Node> {
        Arc::new(Node::Leaf)
    }

    fn q(block: usize, func: Vec<u32>, a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
        Node::new_query(block, None, func, vec![Some(a), Some(b)])
    }

    fn two_blocks() -> Vec<BlockSpace> {
        // Block values 0..4 with uneven weights; h is the parity of the value.
        let mu = [0.4, 0.1, 0.2, 0.3];
        vec![BlockSpace::parity(&mu), BlockSpace::parity(&[0.25; 4])]
    }

    /// Block 0 at the root, block 1 at level 2 with a different query per
    /// branch: the left branch reads the low bit, the right one a constant.
    fn branchy() -> DecisionTree {
        let low = q(1, vec![0, 1, 0, 1], leaf(), leaf());
        let constant = q(1, vec![0, 0, 0, 0], leaf(), leaf());
        DecisionTree::new(two_blocks(), q(0, vec![0, 1, 1, 0], low, constant)).unwrap()
    }

    #[test]
    fn move_to_root_picks_the_best_branch_query() {
        let t = branchy();
        let m = move_to_root(&t, 1).unwrap();
        assert_eq!(m.block, 1);
        assert_eq!(m.chosen, vec![0]);
        assert_eq!(m.tree.level_blocks().unwrap(), vec![1, 0]);
        assert!(m.output_advantage >= m.input_advantage - 1e-12);
        assert!(m.witness_value >= m.input_advantage - 1e-12);
        assert!(m.output_advantage >= m.witness_value - 1e-12);
        assert!(is_rearrangement_of(&m.tree, &t));
    }

    #[test]
    fn single_block_is_unchanged() {
        let blocks = vec![BlockSpace::parity(&[0.5, 0.5])];
        let t = DecisionTree::new(blocks, q(0, vec![0, 1], leaf(), leaf())).unwrap();
        let m = move_to_root(&t, 1).unwrap();
        assert_eq!(m.tree, t);
        assert_eq!(m.output_advantage, t.advantage());
    }

    #[test]
    fn move_requires_bottom_only_block() {
        let t = branchy();
        let r = move_to_root(&t, 2);
        assert!(matches!(r, Err(TreeError::Precondition(_))));
    }

    #[test]
    fn reorder_removes_alternation() {
        // levels (0, 1, 0)
        let blocks = two_blocks();
        let bottom_a = q(0, vec![0, 0, 1, 1], leaf(), leaf());
        let bottom_b = q(0, vec![0, 1, 1, 0], leaf(), leaf());
        let mid = q(1, vec![0, 1, 1, 0], bottom_a, bottom_b);
        let t = DecisionTree::new(blocks, q(0, vec![0, 1, 0, 1], mid.clone(), mid)).unwrap();
        assert_eq!(t.alternations().unwrap(), vec![3]);
        let r = reorder(&t).unwrap();
        assert!(r.tree.is_ordered());
        assert!(r.tree.advantage() >= t.advantage() - 1e-12);
        assert_eq!(r.tree.queries_per_block().unwrap(), vec![2, 1]);
        assert!(is_rearrangement_of(&r.tree, &t));
    }

    #[test]
    fn ordered_input_is_identity() {
        let t = branchy();
        let r = reorder(&t).unwrap();
        assert!(r.steps.is_empty());
        assert_eq!(r.tree, t);
    }

    #[test]
    fn merge_and_collapse() {
        // levels (0, 0, 1): two superqueries, the first with 4 outcomes.
        let blocks = two_blocks();
        let last = q(1, vec![0, 1, 0, 1], leaf(), leaf());
        let second = q(0, vec![0, 1, 0, 1], last.clone(), last);
        let t = DecisionTree::new(blocks, q(0, vec![0, 0, 1, 1], second.clone(), second)).unwrap();
        let m = merge_superqueries(&t).unwrap();
        assert_eq!(m.level_blocks().unwrap(), vec![0, 1]);
        assert_eq!(m.root().query().unwrap().children.len(), 4);
        let c = collapse_to_read_once(&t).unwrap();
        assert!(c.is_read_once());
        assert!((c.advantage() - t.advantage()).abs() < 1e-12);
        // Leaf law is preserved: the merged index decodes to the original path.
        let orig: HashMap<Vec<u32>, f64> =
            t.leaf_masses().into_iter().map(|l| (l.path, l.prob)).collect();
        for l in c.leaf_masses() {
            let i = l.path[0];
            let path = vec![i % 2, i / 2, l.path[1]];
            assert!((orig[&path] - l.prob).abs() < 1e-15);
        }
        let mid = q(1, vec![0, 1, 1, 0], leaf_q(), leaf_q());
        let unordered = DecisionTree::new(two_blocks(), q(0, vec![0, 1, 0, 1], mid.clone(), mid)).unwrap();
        assert_eq!(collapse_to_read_once(&unordered), Err(TreeError::NotOrdered));
    }

    fn leaf_q() -> Arc<Node> {
        q(0, vec![0; 4], leaf(), leaf())
    }
}
