//! Random planar networks, tessellation into grid cells and the cell-based
//! network decomposition with certified block parameters.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanarError {
    #[error("radius must be positive and at most 1 for tessellation, got {0}")]
    BadRadius(f64),
    #[error("cell ({row}, {col}) holds {count} nodes, fewer than mu/2 = {required}")]
    UndersizedCell {
        row: usize,
        col: usize,
        count: usize,
        required: f64,
    },
    #[error("no cell survived the transmission filter")]
    EmptyS2,
    #[error("transmission counts sum to {sum}, expected T = {expected}")]
    InconsistentCounts { sum: u64, expected: u64 },
    #[error("expected {expected} transmission counts, got {got}")]
    CountLength { expected: usize, got: usize },
    #[error("network file: {0}")]
    Format(String),
}

/// Undirected simple graph on nodes `0..n` with sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Graph {
            adj: vec![Vec::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Graph::new(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn add_node(&mut self) -> usize {
        self.adj.push(Vec::new());
        self.adj.len() - 1
    }

    /// Adds the edge if absent; returns whether it was new. Self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        if a == b || self.has_edge(a, b) {
            return false;
        }
        let pa = self.adj[a].binary_search(&b).unwrap_err();
        self.adj[a].insert(pa, b);
        let pb = self.adj[b].binary_search(&a).unwrap_err();
        self.adj[b].insert(pb, a);
        true
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    /// Connected component id per node, numbered in order of smallest member.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.len()];
        let mut next = 0;
        for s in 0..self.len() {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adj[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = next;
                        queue.push_back(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// BFS parent pointers from `root`; `None` for the root and unreachable nodes.
    pub fn bfs_tree(&self, root: usize) -> (Vec<Option<usize>>, Vec<usize>) {
        let mut parent = vec![None; self.len()];
        let mut seen = vec![false; self.len()];
        let mut order = vec![root];
        seen[root] = true;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &w in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    order.push(w);
                }
            }
        }
        (parent, order)
    }
}

/// Nodes placed in the unit square, joined when strictly closer than the radius.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarNetwork {
    positions: Vec<(f64, f64)>,
    radius: f64,
    seed: Option<u64>,
    graph: Graph,
}

impl PlanarNetwork {
    /// Builds the network from explicit positions.
    pub fn from_positions(positions: Vec<(f64, f64)>, radius: f64, seed: Option<u64>) -> Self {
        let graph = radius_graph(&positions, radius);
        PlanarNetwork {
            positions,
            radius,
            seed,
            graph,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile {
            version: 1,
            n: self.len(),
            radius: self.radius,
            seed: self.seed,
            positions: self.positions.iter().map(|&(x, y)| [x, y]).collect(),
        })
        .expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanarError> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| PlanarError::Format(e.to_string()))?;
        if file.version != 1 {
            return Err(PlanarError::Format(format!(
                "unsupported version {}",
                file.version
            )));
        }
        if file.positions.len() != file.n {
            return Err(PlanarError::Format(format!(
                "n = {} but {} positions given",
                file.n,
                file.positions.len()
            )));
        }
        if let Some(p) = file
            .positions
            .iter()
            .find(|p| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
        {
            return Err(PlanarError::Format(format!(
                "position {p:?} outside the unit square"
            )));
        }
        if !(file.radius >= 0.0) {
            return Err(PlanarError::Format(format!("bad radius {}", file.radius)));
        }
        Ok(Self::from_positions(
            file.positions.iter().map(|p| (p[0], p[1])).collect(),
            file.radius,
            file.seed,
        ))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    version: u32,
    n: usize,
    radius: f64,
    seed: Option<u64>,
    positions: Vec<[f64; 2]>,
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn radius_graph(positions: &[(f64, f64)], radius: f64) -> Graph {
    let n = positions.len();
    let mut adj = vec![Vec::new(); n];
    if radius > 0.0 && n > 1 {
        // Buckets of side >= radius, so neighbours live in the 3x3 block around a bucket.
        let g = ((1.0 / radius).floor() as usize).clamp(1, 2048);
        let bucket = |c: f64| ((c * g as f64) as usize).min(g - 1);
        let mut buckets = vec![Vec::new(); g * g];
        for (i, &(x, y)) in positions.iter().enumerate() {
            buckets[bucket(y) * g + bucket(x)].push(i);
        }
        let r2 = radius * radius;
        for (i, &p) in positions.iter().enumerate() {
            let (bx, by) = (bucket(p.0), bucket(p.1));
            for yy in by.saturating_sub(1)..=(by + 1).min(g - 1) {
                for xx in bx.saturating_sub(1)..=(bx + 1).min(g - 1) {
                    for &j in &buckets[yy * g + xx] {
                        if j != i && dist2(p, positions[j]) < r2 {
                            adj[i].push(j);
                        }
                    }
                }
            }
            adj[i].sort_unstable();
        }
    }
    Graph { adj }
}

/// Samples `n` iid uniform positions and connects pairs at distance `< radius`.
pub fn sample_network(n: usize, radius: f64, rng: &mut RngStream) -> PlanarNetwork {
    let positions = (0..n).map(|_| (rng.unit(), rng.unit())).collect();
    PlanarNetwork::from_positions(positions, radius, Some(rng.seed()))
}

/// The connectivity-threshold radius scale `sqrt(c ln N / N)`.
pub fn threshold_radius(n: usize, c: f64) -> f64 {
    (c * (n as f64).ln() / n as f64).sqrt()
}

pub fn is_connected(net: &PlanarNetwork) -> bool {
    net.graph.is_connected()
}

/// Square grid of `side × side` cells over the unit square, rows indexed by
/// `y` and columns by `x`, both 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct Tessellation {
    side_cells: usize,
    cell_of: Vec<(usize, usize)>,
    members: Vec<Vec<usize>>,
}

impl Tessellation {
    /// Cells per row, `⌊1/R⌋`.
    pub fn per_side(&self) -> usize {
        self.side_cells
    }

    /// Total cell count `M`.
    pub fn cell_count(&self) -> usize {
        self.side_cells * self.side_cells
    }

    /// Cell side length `1/⌊1/R⌋`.
    pub fn side(&self) -> f64 {
        1.0 / self.side_cells as f64
    }

    pub fn cell_of(&self, node: usize) -> (usize, usize) {
        self.cell_of[node]
    }

    pub fn members(&self, row: usize, col: usize) -> &[usize] {
        &self.members[(row - 1) * self.side_cells + (col - 1)]
    }

    /// Expected nodes per cell, `N/M`.
    pub fn mu(&self) -> f64 {
        self.cell_of.len() as f64 / self.cell_count() as f64
    }

    /// Distance between the closed squares of two cells.
    pub fn cell_distance(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let gap = |i: usize, j: usize| i.abs_diff(j).saturating_sub(1) as f64 * self.side();
        gap(a.0, b.0).hypot(gap(a.1, b.1))
    }

    /// All cells at distance `< radius` from `cell` (the cell itself included).
    pub fn neighborhood(&self, cell: (usize, usize), radius: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 1..=self.side_cells {
            for c in 1..=self.side_cells {
                if self.cell_distance(cell, (r, c)) < radius {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Grid index along one axis; a point on a gridline goes to the lower cell.
fn grid_index(coord: f64, per_side: usize) -> usize {
    ((coord * per_side as f64).ceil() as usize).clamp(1, per_side)
}

pub fn tessellate(net: &PlanarNetwork) -> Result<Tessellation, PlanarError> {
    let r = net.radius;
    if !(r > 0.0 && r <= 1.0) {
        return Err(PlanarError::BadRadius(r));
    }
    let side_cells = (1.0 / r).floor() as usize;
    let mut members = vec![Vec::new(); side_cells * side_cells];
    let cell_of: Vec<_> = net
        .positions
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let cell = (grid_index(y, side_cells), grid_index(x, side_cells));
            members[(cell.0 - 1) * side_cells + (cell.1 - 1)].push(i);
            cell
        })
        .collect();
    Ok(Tessellation {
        side_cells,
        cell_of,
        members,
    })
}

/// The stated lower-tail bound `exp(-0.15 μ)`.
pub fn chernoff_bound(mu: f64) -> f64 {
    (-0.15 * mu).exp()
}

/// Exact `Pr[Bin(n, p) <= k]`, summed in log space.
pub fn binomial_lower_tail(n: u64, p: f64, k: u64) -> f64 {
    if k >= n || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let ratio = (p / (1.0 - p)).ln();
    let mut log_pmf = n as f64 * (1.0 - p).ln();
    let mut terms = Vec::with_capacity(k as usize + 1);
    for i in 0..=k {
        terms.push(log_pmf);
        log_pmf += ((n - i) as f64 / (i + 1) as f64).ln() + ratio;
    }
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    (top + sum.ln()).exp().min(1.0)
}

/// Partition into input blocks `I_1..I_k`, auxiliary blocks `A_1..A_k` and
/// the leftover auxiliary block `A_0`, with certified budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decomposition {
    pub n: usize,
    pub k: usize,
    /// Per-input-node transmission budget.
    pub d: f64,
    /// Per-block transmission budget.
    #[serde(rename = "D")]
    pub big_d: f64,
    pub input_blocks: Vec<Vec<usize>>,
    pub aux_blocks: Vec<Vec<usize>>,
    pub aux0: Vec<usize>,
    /// Fixed input bit per node; meaningful for auxiliary nodes only.
    pub fixed: Vec<bool>,
    /// Grid cells the input blocks were drawn from, when built from a tessellation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<(usize, usize)>,
}

impl Decomposition {
    pub fn node_count(&self) -> usize {
        self.fixed.len()
    }

    /// `Some(j)` (0-based) when `v` is in input block `j`.
    pub fn input_block_of(&self, v: usize) -> Option<usize> {
        self.input_blocks.iter().position(|b| b.contains(&v))
    }

    /// `Some(Some(j))` for `A_{j+1}`, `Some(None)` for `A_0`, `None` for input nodes.
    pub fn aux_block_of(&self, v: usize) -> Option<Option<usize>> {
        if let Some(j) = self.aux_blocks.iter().position(|b| b.contains(&v)) {
            Some(Some(j))
        } else if self.aux0.contains(&v) {
            Some(None)
        } else {
            None
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decomposition serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanarError> {
        serde_json::from_str(text).map_err(|e| PlanarError::Format(e.to_string()))
    }
}

/// Selects input blocks from sparse, well-separated cells.
///
/// `tx_counts[v]` is the number of transmissions node `v` makes; they must
/// sum to `total`.
pub fn decompose(
    net: &PlanarNetwork,
    tx_counts: &[u64],
    total: u64,
) -> Result<Decomposition, PlanarError> {
    let n_nodes = net.len();
    if tx_counts.len() != n_nodes {
        return Err(PlanarError::CountLength {
            expected: n_nodes,
            got: tx_counts.len(),
        });
    }
    let sum: u64 = tx_counts.iter().sum();
    if sum != total {
        return Err(PlanarError::InconsistentCounts {
            sum,
            expected: total,
        });
    }
    let tess = tessellate(net)?;
    let l = tess.per_side();
    let m = tess.cell_count();
    let required = tess.mu() / 2.0;
    for row in 1..=l {
        for col in 1..=l {
            let count = tess.members(row, col).len();
            if (count as f64) < required {
                return Err(PlanarError::UndersizedCell {
                    row,
                    col,
                    count,
                    required,
                });
            }
        }
    }

    let s1: Vec<(usize, usize)> = (1..=l)
        .filter(|i| i % 3 == 1)
        .flat_map(|i| (1..=l).filter(|j| j % 3 == 1).map(move |j| (i, j)))
        .collect();
    let neighborhoods: Vec<Vec<(usize, usize)>> = s1
        .iter()
        .map(|&c| tess.neighborhood(c, net.radius()))
        .collect();
    let gamma_tx = |cells: &[(usize, usize)]| -> u64 {
        cells
            .iter()
            .flat_map(|&(r, c)| tess.members(r, c))
            .map(|&v| tx_counts[v])
            .sum()
    };
    // "fewer than 18T/M", kept in integers: tx * M < 18 T. With T = 0 nothing
    // is fewer than zero, so idle neighbourhoods are admitted instead.
    let s2: Vec<usize> = (0..s1.len())
        .filter(|&i| {
            let tx = gamma_tx(&neighborhoods[i]);
            if total == 0 {
                tx == 0
            } else {
                (tx as u128) * (m as u128) < 18 * total as u128
            }
        })
        .collect();
    if s2.is_empty() {
        return Err(PlanarError::EmptyS2);
    }

    let n = n_nodes.div_ceil(4 * m);
    let mut is_input = vec![false; n_nodes];
    let mut input_blocks = Vec::with_capacity(s2.len());
    for &i in &s2 {
        let (r, c) = s1[i];
        let mut cell: Vec<usize> = tess.members(r, c).to_vec();
        cell.sort_by_key(|&v| (tx_counts[v], v));
        let mut block: Vec<usize> = cell.into_iter().take(n).collect();
        if block.len() < n {
            return Err(PlanarError::UndersizedCell {
                row: r,
                col: c,
                count: block.len(),
                required,
            });
        }
        block.sort_unstable();
        for &v in &block {
            is_input[v] = true;
        }
        input_blocks.push(block);
    }
    let mut in_aux_block = vec![false; n_nodes];
    let aux_blocks: Vec<Vec<usize>> = s2
        .iter()
        .map(|&i| {
            let mut block: Vec<usize> = neighborhoods[i]
                .iter()
                .flat_map(|&(r, c)| tess.members(r, c).iter().copied())
                .filter(|&v| !is_input[v])
                .collect();
            block.sort_unstable();
            for &v in &block {
                in_aux_block[v] = true;
            }
            block
        })
        .collect();
    let aux0 = (0..n_nodes)
        .filter(|&v| !is_input[v] && !in_aux_block[v])
        .collect();
    let big_d = 18.0 * total as f64 / m as f64;
    Ok(Decomposition {
        n,
        k: s2.len(),
        d: big_d / n as f64,
        big_d,
        input_blocks,
        aux_blocks,
        aux0,
        fixed: vec![false; n_nodes],
        cells: s2.iter().map(|&i| s1[i]).collect(),
    })
}

/// Outcome of checking the structural properties of a decomposition.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DecompositionReport {
    /// All input blocks have the same size `n`.
    pub p1: bool,
    /// `(block, size)` for blocks whose size differs from `n`.
    pub p1_violations: Vec<(usize, usize)>,
    /// Every neighbour of `I_j` lies in `I_j ∪ A_j`.
    pub p2: bool,
    /// `(block, inside, outside)` edges leaving `I_j ∪ A_j`.
    pub p2_violations: Vec<(usize, usize, usize)>,
    /// Blocks are pairwise disjoint and cover every node.
    pub partition: bool,
    pub duplicated: Vec<usize>,
    pub uncovered: Vec<usize>,
}

impl DecompositionReport {
    pub fn all_pass(&self) -> bool {
        self.p1 && self.p2 && self.partition
    }
}

pub fn verify_decomposition(graph: &Graph, dec: &Decomposition) -> DecompositionReport {
    let n_nodes = graph.len();
    let mut report = DecompositionReport::default();
    report.p1_violations = dec
        .input_blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.len() != dec.n)
        .map(|(j, b)| (j, b.len()))
        .collect();
    report.p1 = report.p1_violations.is_empty() && dec.input_blocks.len() == dec.k;

    let mut seen = vec![0usize; n_nodes];
    let all_blocks = dec
        .input_blocks
        .iter()
        .chain(dec.aux_blocks.iter())
        .chain(std::iter::once(&dec.aux0));
    for b in all_blocks {
        for &v in b {
            if v < n_nodes {
                seen[v] += 1;
            }
        }
    }
    report.duplicated = (0..n_nodes).filter(|&v| seen[v] > 1).collect();
    report.uncovered = (0..n_nodes).filter(|&v| seen[v] == 0).collect();
    report.partition = report.duplicated.is_empty()
        && report.uncovered.is_empty()
        && dec.aux_blocks.len() == dec.input_blocks.len();

    for (j, block) in dec.input_blocks.iter().enumerate() {
        let mut allowed = vec![false; n_nodes];
        for &v in block.iter().chain(dec.aux_blocks.get(j).into_iter().flatten()) {
            allowed[v] = true;
        }
        for &v in block {
            for &w in graph.neighbors(v) {
                if !allowed[w] {
                    report.p2_violations.push((j, v, w));
                }
            }
        }
    }
    report.p2 = report.p2_violations.is_empty();
    report
}

/// Outcome of checking per-node and per-block transmission budgets.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoundedReport {
    /// No input node exceeds `d` transmissions.
    pub p3: bool,
    /// `(node, count)` for input nodes over budget.
    pub p3_violations: Vec<(usize, u64)>,
    /// No block `I_j ∪ A_j` exceeds `D` transmissions.
    pub p4: bool,
    pub block_counts: Vec<u64>,
    /// `(block, count)` for blocks over budget.
    pub p4_violations: Vec<(usize, u64)>,
}

impl BoundedReport {
    pub fn all_pass(&self) -> bool {
        self.p3 && self.p4
    }
}

/// Checks transmission budgets given per-node counts.
pub fn check_bounded_counts(
    tx_counts: &[u64],
    dec: &Decomposition,
    d: f64,
    big_d: f64,
) -> BoundedReport {
    let count = |v: usize| tx_counts.get(v).copied().unwrap_or(0);
    let mut report = BoundedReport::default();
    for block in &dec.input_blocks {
        for &v in block {
            if count(v) as f64 > d {
                report.p3_violations.push((v, count(v)));
            }
        }
    }
    report.p3 = report.p3_violations.is_empty();
    for (j, block) in dec.input_blocks.iter().enumerate() {
        let total: u64 = block
            .iter()
            .chain(dec.aux_blocks.get(j).into_iter().flatten())
            .map(|&v| count(v))
            .sum();
        report.block_counts.push(total);
        if total as f64 > big_d {
            report.p4_violations.push((j, total));
        }
    }
    report.p4 = report.p4_violations.is_empty();
    report
}
