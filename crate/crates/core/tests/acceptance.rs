//! The eight acceptance criteria. Each prints one verdict line with its
//! runtime; the test fails if any criterion does.
//!
//! Run with `cargo test -p noisy-parity --test acceptance -- --nocapture`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use statrs::distribution::{Binomial, Discrete};

use noisy_parity::advantage::{alpha_bound, min_transmission_ratio, readonce_advantage, Grid, LogBase, RatioConstants};
use noisy_parity::harness::network_stream;
use noisy_parity::instances::{random_oblivious_tree, random_read_once_tree, tiny_protocol, TinyLimits};
use noisy_parity::noise::{iid_copies_law, regen_output_law, regen_table, total_variation, NoiseParam};
use noisy_parity::planar::{
    binomial_lower_tail, chernoff_bound, check_bounded_counts, decompose, sample_network, tessellate,
    verify_decomposition, Graph,
};
use noisy_parity::protocol::builders::{repetition_majority_parity, star_xor};
use noisy_parity::protocol::exact::error_probability_exact;
use noisy_parity::protocol::exec::error_probability_mc;
use noisy_parity::protocol::{BoolExpr, ExactOptions, Role};
use noisy_parity::reductions::{protocol_to_read_once, ChainOptions};
use noisy_parity::tree::rearrange::{is_rearrangement_of, move_to_root, reorder};
use noisy_parity::tree::{BlockSpace, DecisionTree, Node};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

const EPSILONS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.45];

fn regeneration() -> Verdict {
    let mut worst: f64 = 0.0;
    for t in 1..=4 {
        for eps in EPSILONS {
            let table = regen_table(t, NoiseParam::new(eps).unwrap()).unwrap();
            for b in [false, true] {
                let tv = total_variation(&regen_output_law(&table, b), &iid_copies_law(b, t, eps));
                worst = worst.max(tv);
            }
        }
    }
    verdict(worst <= 1e-12, format!("40 cases, max TV {worst:.3e}"))
}

fn chain_monotonicity() -> Verdict {
    let limits = TinyLimits::default();
    let opts = ChainOptions::default();
    let results: Vec<Result<(bool, f64, f64), String>> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let inst = tiny_protocol(2024, i, &limits);
            assert!(inst.protocol.block_count() <= 3 && inst.protocol.noise_bit_count() <= 20);
            let chain = protocol_to_read_once(&inst.protocol, &inst.mu, &opts).map_err(|e| format!("instance {i}: {e}"))?;
            let r = &chain.report;
            Ok((r.monotone, r.simulation_tv.unwrap_or(f64::INFINITY), r.tree_tv.unwrap_or(f64::INFINITY)))
        })
        .collect();
    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if let Some(e) = errors.first() {
        return verdict(false, format!("{} instances failed to reduce, first: {e}", errors.len()));
    }
    let ok: Vec<(bool, f64, f64)> = results.into_iter().map(Result::unwrap).collect();
    let violations = ok.iter().filter(|r| !r.0).count();
    let sim = ok.iter().map(|r| r.1).fold(0.0, f64::max);
    let tree = ok.iter().map(|r| r.2).fold(0.0, f64::max);
    verdict(
        violations == 0 && sim <= 1e-12 && tree <= 1e-12,
        format!("200 instances, {violations} monotonicity violations, simulation TV {sim:.3e}, leaf-law TV {tree:.3e}"),
    )
}

fn rearrangement() -> Verdict {
    let bad: Vec<String> = (0..200u64)
        .into_par_iter()
        .filter_map(|i| {
            let t = random_oblivious_tree(2024, i, 3, 6, true);
            let levels = t.level_blocks()?;
            let last = *levels.last()?;
            let seg = levels.iter().rev().take_while(|&&b| b == last).count();
            let m = move_to_root(&t, seg).ok()?;
            let move_ok = m.output_advantage >= m.input_advantage - 1e-9
                && m.witness_value >= m.input_advantage - 1e-9
                && m.output_advantage >= m.witness_value - 1e-9
                && is_rearrangement_of(&m.tree, &t);

            let u = random_oblivious_tree(2024, i, 3, 6, false);
            let r = reorder(&u).ok()?;
            let reorder_ok = r.tree.alternations().ok()?.is_empty()
                && r.tree.queries_per_block().ok()? == u.queries_per_block().ok()?
                && r.tree.advantage() >= u.advantage() - 1e-9;
            (!(move_ok && reorder_ok)).then(|| format!("tree {i}"))
        })
        .collect();
    verdict(bad.is_empty(), format!("200 move-to-root + 200 reorder cases, failures: {bad:?}"))
}

/// Two uniform bits, each read once through an ε-noisy copy, XORed.
fn worked_example(eps: f64) -> DecisionTree {
    let block = || BlockSpace::xnd(&[0.5, 0.5], 1, 1, eps);
    let read = vec![0, 1, 1, 0];
    let leaf = Arc::new(Node::Leaf);
    let inner = Node::new_query(1, Some(0), read.clone(), vec![Some(leaf.clone()), Some(leaf)]);
    let root = Node::new_query(0, Some(0), read, vec![Some(inner.clone()), Some(inner)]);
    DecisionTree::new(vec![block(), block()], root).unwrap()
}

fn product_property() -> Verdict {
    let mut worst_bound: f64 = f64::NEG_INFINITY;
    let mut worst_uniform: f64 = 0.0;
    for i in 0..200u64 {
        let t = random_read_once_tree(2024, i, 4, false);
        let r = readonce_advantage(&t).unwrap();
        worst_bound = worst_bound.max(r.estimate.value - r.max_power);
        let u = random_read_once_tree(2024, i, 4, true);
        let r = readonce_advantage(&u).unwrap();
        worst_uniform = worst_uniform.max((r.estimate.value - r.product).abs());
    }
    let example = worked_example(0.1);
    let adv = example.advantage();
    let ok = worst_bound <= 1e-9 && worst_uniform <= 1e-9 && (adv - 0.64).abs() <= 1e-9;
    verdict(
        ok,
        format!(
            "max adv - (max α)^k = {worst_bound:.3e}, branch-uniform |adv - Π α| ≤ {worst_uniform:.3e}, ε=0.1 k=2 gives {adv:.12}"
        ),
    )
}

fn decomposition() -> Verdict {
    let n = 20_000usize;
    let r = (10.0 * (n as f64).ln() / n as f64).sqrt();
    let t = n as f64;
    let outcomes: Vec<Result<(), String>> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let net = sample_network(n, r, &mut network_stream(seed, n));
            let cells = tessellate(&net).map_err(|e| e.to_string())?.cell_count();
            let counts = vec![1u64; n];
            let dec = decompose(&net, &counts, n as u64).map_err(|e| format!("seed {seed}: {e}"))?;
            let structure = verify_decomposition(net.graph(), &dec);
            let bounded = check_bounded_counts(&counts, &dec, dec.d, dec.big_d);
            let certified = cells == 196
                && structure.all_pass()
                && bounded.all_pass()
                && dec.n == 26
                && dec.k >= 13
                && dec.big_d == 18.0 * t / 196.0
                && dec.d <= 72.0 * t / n as f64;
            if certified {
                Ok(())
            } else {
                Err(format!("seed {seed}: not certified (M={cells}, n={}, k={}, D={}, d={})", dec.n, dec.k, dec.big_d, dec.d))
            }
        })
        .collect();
    let failed: Vec<&String> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    // A success that fails certification counts against the criterion outright.
    let uncertified = failed.iter().filter(|f| f.contains("not certified")).count();
    let succeeded = 20 - failed.len();
    verdict(
        succeeded >= 19 && uncertified == 0,
        format!("R = {r:.4}, {succeeded}/20 certified, failures: {failed:?}"),
    )
}

fn chernoff() -> Verdict {
    let mut rows = 0;
    let mut violations = Vec::new();
    for mu in [20.0, 50.0, 100.0, 200.0] {
        for n in [200u64, 400, 1000, 10_000, 100_000, 1_000_000] {
            if mu > n as f64 {
                continue;
            }
            rows += 1;
            let tail = binomial_lower_tail(n, mu / n as f64, (mu / 2.0) as u64);
            if tail > chernoff_bound(mu) {
                violations.push((mu, n, tail));
            }
        }
    }
    verdict(violations.is_empty(), format!("{rows} (N, p) pairs, violations: {violations:?}"))
}

/// `Pr[Bin(r, ε) > r/2]`, plus the tie mass when the true bit is 1.
fn majority_error(r: u64, eps: f64, bit: bool) -> f64 {
    let b = Binomial::new(eps, r).unwrap();
    let upper: f64 = (0..=r).filter(|&j| 2 * j > r).map(|j| b.pmf(j)).sum();
    let tie = if r % 2 == 0 && bit { b.pmf(r / 2) } else { 0.0 };
    upper + tie
}

fn engine_validation() -> Verdict {
    let trials = 100_000u64;
    let mut exact_gap: f64 = 0.0;
    let mut worst_sigmas: f64 = 0.0;
    let mut check = |p: &noisy_parity::protocol::Protocol, f: &BoolExpr, want: &dyn Fn(usize) -> f64, seed| {
        let exact = error_probability_exact(p, f, &ExactOptions::default()).unwrap();
        let mc = error_probability_mc(p, f, &p.all_inputs(), trials, seed, 0.95).unwrap();
        for (i, (&e, m)) in exact.per_input.iter().zip(&mc.per_input).enumerate() {
            let w = want(i);
            exact_gap = exact_gap.max((e - w).abs());
            let sd = (w * (1.0 - w) / trials as f64).sqrt();
            worst_sigmas = worst_sigmas.max((m.estimate - w).abs() / sd);
        }
    };
    for (k, eps) in EPSILONS.into_iter().enumerate() {
        let star = star_xor(2, 1, eps).unwrap();
        check(&star, &BoolExpr::parity(2), &|_| 2.0 * eps * (1.0 - eps), k as u64);
    }
    let graph = Graph::from_edges(2, &[(0, 1)]);
    let roles = vec![
        Role::Aux {
            fixed: false,
            block: Some(0),
        },
        Role::Input { block: 0 },
    ];
    for r in 1..=6u64 {
        for eps in [0.1, 0.3] {
            let p = repetition_majority_parity(&graph, &roles, r as usize, eps).unwrap();
            let want = move |i: usize| majority_error(r, eps, i == 1);
            check(&p, &BoolExpr::parity(1), &want, 100 + r);
        }
    }
    verdict(
        exact_gap <= 1e-12 && worst_sigmas <= 3.0,
        format!("exact vs formula {exact_gap:.3e}, MC at 1e5 trials within {worst_sigmas:.2}σ"),
    )
}

/// `(m, grid index, S)` for `N = 2^(2^m)`, `ε = δ = 0.1`, `C' = 72`,
/// `C'' = 1`, base-2 logs, grid `S_i = 1e-4 · 1.01^i`. Computed once by a
/// separate linear scan of the un-logged inequality in double precision.
const MIN_RATIO_TABLE: [(u32, u32, f64); 4] = [
    (3, 488, 0.012847848473477615),
    (4, 497, 0.014051502661122714),
    (5, 506, 0.01536792151955502),
    (6, 514, 0.01664125686901623),
];

/// Largest additive step between successive rows of the table above.
const MAX_RATIO_STEP: f64 = 2e-3;

fn bound_evaluators() -> Verdict {
    let base = LogBase::Two;
    let mut ok = true;
    let mut notes = Vec::new();
    for n in [1.0, 4.0, 26.0] {
        for eps in EPSILONS {
            ok &= alpha_bound(n, 0.0, eps, 1.0, base).unwrap() == 7.0 / 8.0;
            let mut prev = 0.0;
            for step in 0..200 {
                let a = alpha_bound(n, step as f64 * 0.05, eps, 1.0, base).unwrap();
                ok &= a >= prev;
                prev = a;
            }
        }
    }
    notes.push(format!("alpha(D=0) = 7/8 and monotone: {ok}"));

    let consts = RatioConstants::default();
    let grid = Grid::default();
    let mut prev = 0.0;
    for e in 2..=64 {
        let s = min_transmission_ratio(2f64.powi(e), 0.1, 0.1, &consts, &grid, base).unwrap().s;
        ok &= s >= prev;
        prev = s;
    }
    let mut last: Option<f64> = None;
    for (m, index, s) in MIN_RATIO_TABLE {
        let got = min_transmission_ratio(2f64.powi(1 << m), 0.1, 0.1, &consts, &grid, base).unwrap();
        ok &= got.index == index && ((got.s - s) / s).abs() <= 1e-12;
        if let Some(prev) = last {
            ok &= got.s > prev && got.s - prev <= MAX_RATIO_STEP;
        }
        last = Some(got.s);
        notes.push(format!("m={m}: S={:.6} (index {})", got.s, got.index));
    }
    verdict(ok, notes.join(", "))
}

#[test]
fn acceptance_criteria() {
    type Check = fn() -> Verdict;
    let criteria: [(u32, &str, Duration, Check); 8] = [
        (1, "regeneration exactness", Duration::from_secs(1), regeneration),
        (2, "reduction-chain monotonicity", Duration::from_secs(300), chain_monotonicity),
        (3, "rearrangement", Duration::from_secs(300), rearrangement),
        (4, "product property", Duration::from_secs(60), product_property),
        (5, "decomposition", Duration::from_secs(30), decomposition),
        (6, "chernoff", Duration::from_secs(1), chernoff),
        (7, "engine validation", Duration::from_secs(60), engine_validation),
        (8, "bound evaluators", Duration::from_secs(1), bound_evaluators),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let pass = v.ok && took < limit;
        println!(
            "[{}] {id}. {name} ({:.2}s, limit {}s): {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs(),
            v.detail
        );
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
