//! Reference protocols used to exercise the engines.

use super::{BoolExpr, Protocol, ProtocolClass, ProtocolError, Role, Transmission};
use crate::planar::{Decomposition, Graph};

/// Roles implied by a decomposition: input nodes in their blocks, every
/// other node auxiliary with its fixed bit.
pub fn roles_from_decomposition(dec: &Decomposition) -> Vec<Role> {
    let mut roles: Vec<Role> = dec
        .fixed
        .iter()
        .map(|&fixed| Role::Aux { fixed, block: None })
        .collect();
    for (j, block) in dec.aux_blocks.iter().enumerate() {
        for &v in block {
            roles[v] = Role::Aux {
                fixed: dec.fixed[v],
                block: Some(j),
            };
        }
    }
    for (j, block) in dec.input_blocks.iter().enumerate() {
        for &v in block {
            roles[v] = Role::Input { block: j };
        }
    }
    roles
}

/// Majority decode of `reps` received copies (a single copy is used as is).
fn decode(first: usize, reps: usize) -> BoolExpr {
    if reps == 1 {
        BoolExpr::rx(first)
    } else {
        BoolExpr::Maj((first..first + reps).map(BoolExpr::rx).collect())
    }
}

/// Star with an auxiliary centre (node 0) and `leaves` input leaves in one
/// block. Each leaf broadcasts its bit `reps` times; the centre outputs the
/// XOR of the majority-decoded leaf bits.
pub fn star_xor(leaves: usize, reps: usize, epsilon: f64) -> Result<Protocol, ProtocolError> {
    if leaves == 0 || reps == 0 {
        return Err(ProtocolError::Invalid("star needs leaves and repetitions".into()));
    }
    let edges: Vec<(usize, usize)> = (1..=leaves).map(|l| (0, l)).collect();
    let graph = Graph::from_edges(leaves + 1, &edges);
    let mut roles = vec![Role::Input { block: 0 }; leaves + 1];
    roles[0] = Role::Aux {
        fixed: false,
        block: Some(0),
    };
    let mut schedule = Vec::new();
    for l in 1..=leaves {
        for _ in 0..reps {
            schedule.push(Transmission::new(l, BoolExpr::input()));
        }
    }
    let out = BoolExpr::Xor((0..leaves).map(|i| decode(i * reps, reps)).collect());
    schedule.push(Transmission::new(0, out));
    Protocol::new(graph, roles, schedule, epsilon, ProtocolClass::General, vec![])
}

/// Every input node broadcasts its bit `r` times to a collector, an
/// auxiliary node adjacent to all inputs (the smallest such index), which
/// outputs the XOR of the majority-decoded bits.
pub fn repetition_majority_parity(
    graph: &Graph,
    roles: &[Role],
    r: usize,
    epsilon: f64,
) -> Result<Protocol, ProtocolError> {
    if r == 0 {
        return Err(ProtocolError::Invalid("repetition count must be positive".into()));
    }
    let tmp = Protocol {
        graph: graph.clone(),
        roles: roles.to_vec(),
        schedule: Vec::new(),
        epsilon,
        class: ProtocolClass::General,
        sources: Vec::new(),
    };
    let inputs = tmp.input_nodes();
    let collector = (0..roles.len())
        .find(|&v| !roles[v].is_input() && inputs.iter().all(|&u| graph.has_edge(u, v)))
        .ok_or(ProtocolError::NoCollector)?;
    let mut schedule = Vec::new();
    for &u in &inputs {
        for _ in 0..r {
            schedule.push(Transmission::new(u, BoolExpr::input()));
        }
    }
    let out = BoolExpr::Xor((0..inputs.len()).map(|i| decode(i * r, r)).collect());
    schedule.push(Transmission::new(collector, out));
    Protocol::new(graph.clone(), roles.to_vec(), schedule, epsilon, ProtocolClass::General, vec![])
}

/// Parity aggregation up a BFS spanning tree rooted at the smallest
/// auxiliary node (node 0 when every node is an input). Each non-root node,
/// deepest first, broadcasts the XOR of its own input (if any) and its
/// children's decoded partial parities: `r_local` times for tree leaves,
/// `r_up` times for internal nodes. The root outputs the total.
pub fn cluster_sum(
    graph: &Graph,
    roles: &[Role],
    r_local: usize,
    r_up: usize,
    epsilon: f64,
) -> Result<Protocol, ProtocolError> {
    if r_local == 0 || r_up == 0 {
        return Err(ProtocolError::Invalid("repetition counts must be positive".into()));
    }
    if graph.is_empty() || !graph.is_connected() {
        return Err(ProtocolError::Disconnected);
    }
    let root = (0..roles.len()).find(|&v| !roles[v].is_input()).unwrap_or(0);
    let (parent, order) = graph.bfs_tree(root);
    let mut children = vec![Vec::new(); graph.len()];
    for &v in &order {
        if let Some(p) = parent[v] {
            children[p].push(v);
        }
    }
    // first transmission index and repetition count per node
    let mut sent: Vec<Option<(usize, usize)>> = vec![None; graph.len()];
    let mut schedule = Vec::new();
    let partial = |v: usize, sent: &[Option<(usize, usize)>]| {
        let mut terms = Vec::new();
        if roles[v].is_input() {
            terms.push(BoolExpr::input());
        }
        for &c in &children[v] {
            let (first, reps) = sent[c].expect("children are scheduled first");
            terms.push(decode(first, reps));
        }
        BoolExpr::Xor(terms)
    };
    for &v in order.iter().rev() {
        if v == root {
            continue;
        }
        let reps = if children[v].is_empty() { r_local } else { r_up };
        let expr = partial(v, &sent);
        sent[v] = Some((schedule.len(), reps));
        for _ in 0..reps {
            schedule.push(Transmission::new(v, expr.clone()));
        }
    }
    schedule.push(Transmission::new(root, partial(root, &sent)));
    Protocol::new(graph.clone(), roles.to_vec(), schedule, epsilon, ProtocolClass::General, vec![])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::exact::{error_probability_exact, ExactOptions};

    fn star_graph(inputs: usize) -> (Graph, Vec<Role>) {
        let edges: Vec<_> = (1..=inputs).map(|l| (0, l)).collect();
        let mut roles = vec![Role::Input { block: 0 }; inputs + 1];
        roles[0] = Role::Aux {
            fixed: false,
            block: Some(0),
        };
        (Graph::from_edges(inputs + 1, &edges), roles)
    }

    #[test]
    fn repetition_without_noise_is_exact() {
        let (g, roles) = star_graph(3);
        let p = repetition_majority_parity(&g, &roles, 1, 0.0).unwrap();
        let rep = error_probability_exact(&p, &BoolExpr::parity(3), &ExactOptions::default()).unwrap();
        assert_eq!(rep.worst, 0.0);
    }

    #[test]
    fn collector_must_see_all_inputs() {
        let g = Graph::from_edges(3, &[(0, 1)]);
        let roles = vec![
            Role::Aux {
                fixed: false,
                block: Some(0),
            },
            Role::Input { block: 0 },
            Role::Input { block: 0 },
        ];
        assert_eq!(
            repetition_majority_parity(&g, &roles, 1, 0.1),
            Err(ProtocolError::NoCollector)
        );
    }

    #[test]
    fn cluster_sum_is_exact_without_noise() {
        // path 0 - 1 - 2 - 3 with an auxiliary root at 0
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let roles = vec![
            Role::Aux {
                fixed: false,
                block: Some(0),
            },
            Role::Input { block: 0 },
            Role::Input { block: 0 },
            Role::Input { block: 0 },
        ];
        let p = cluster_sum(&g, &roles, 1, 1, 0.0).unwrap();
        let rep = error_probability_exact(&p, &BoolExpr::parity(3), &ExactOptions::default()).unwrap();
        assert_eq!(rep.worst, 0.0);
        let disconnected = Graph::from_edges(4, &[(0, 1), (2, 3)]);
        assert_eq!(
            cluster_sum(&disconnected, &roles, 1, 1, 0.0),
            Err(ProtocolError::Disconnected)
        );
    }

    #[test]
    fn star_counts() {
        let p = star_xor(3, 2, 0.1).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p.output_node(), 0);
    }
}
