use proptest::prelude::*;

use noisy_parity::instances::{tiny_protocol, TinyLimits};
use noisy_parity::noise::total_variation;
use noisy_parity::planar::Graph;
use noisy_parity::protocol::builders::{cluster_sum, star_xor};
use noisy_parity::protocol::exact::error_probability_exact;
use noisy_parity::protocol::exec::error_probability_mc;
use noisy_parity::protocol::{
    exact_channel, BoolExpr, ExactOptions, Outcome, Protocol, ProtocolClass, Role, Transmission,
};
use noisy_parity::reductions::{to_noisy_copy, to_semi_noisy};

fn output_rows(p: &Protocol, opts: &ExactOptions) -> Vec<Vec<f64>> {
    let ch = exact_channel(p, &p.all_inputs(), &Outcome::Output, opts).unwrap();
    (0..ch.inputs().len()).map(|i| vec![ch.prob(i, 0), ch.prob(i, 1)]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ignored_transmissions_change_nothing(index in 0u64..10_000) {
        let inst = tiny_protocol(99, index, &TinyLimits { max_noise_bits: 14, ..TinyLimits::default() });
        let p = &inst.protocol;
        let mut schedule = p.schedule().to_vec();
        let out = schedule.pop().unwrap();
        let sender = out.sender;
        schedule.push(Transmission::new(sender, BoolExpr::not(BoolExpr::input())));
        schedule.push(out);
        let padded = Protocol::new(
            p.graph().clone(),
            p.roles().to_vec(),
            schedule,
            p.epsilon(),
            p.class(),
            p.sources().to_vec(),
        )
        .unwrap();
        let opts = ExactOptions::with_bits(40);
        for (a, b) in output_rows(p, &opts).iter().zip(&output_rows(&padded, &opts)) {
            prop_assert!(total_variation(a, b) <= 1e-15);
        }
    }

    #[test]
    fn reductions_respect_budgets_and_classes(index in 0u64..10_000) {
        let inst = tiny_protocol(5, index, &TinyLimits::default());
        let p = &inst.protocol;
        let semi = to_semi_noisy(p, None).unwrap();
        prop_assert!(semi.protocol.check_class(ProtocolClass::SemiNoisy).is_ok());
        let (_, big_d) = p.tight_budgets();
        let (_, big_d1) = semi.protocol.tight_budgets();
        prop_assert!(big_d1 <= 3.0 * big_d, "{} > 3 * {}", big_d1, big_d);

        let d = (semi.protocol.tight_budgets().0 as usize).max(1);
        let copy = to_noisy_copy(&semi.protocol, d).unwrap();
        prop_assert!(copy.protocol.check_class(ProtocolClass::NoisyCopy).is_ok());
        let counts = copy.protocol.tx_counts();
        for v in copy.protocol.input_nodes() {
            prop_assert_eq!(counts[v], 1);
        }
    }
}

/// Per-input exact error against Monte Carlo at 10^5 trials, within 3σ.
fn exact_vs_mc(p: &Protocol, f: &BoolExpr, seed: u64) {
    let exact = error_probability_exact(p, f, &ExactOptions::default()).unwrap();
    let trials = 100_000;
    let mc = error_probability_mc(p, f, &p.all_inputs(), trials, seed, 0.95).unwrap();
    for (e, m) in exact.per_input.iter().zip(&mc.per_input) {
        let sd = (e * (1.0 - e) / trials as f64).sqrt();
        assert!((m.estimate - e).abs() <= 3.0 * sd + 1e-12, "input {}: {} vs {e}", m.input, m.estimate);
    }
}

#[test]
fn builtin_protocols_agree_with_sampling() {
    exact_vs_mc(&star_xor(2, 1, 0.1).unwrap(), &BoolExpr::parity(2), 1);
    exact_vs_mc(&star_xor(2, 2, 0.2).unwrap(), &BoolExpr::parity(2), 2);
    exact_vs_mc(&star_xor(3, 3, 0.15).unwrap(), &BoolExpr::parity(3), 3);
    let graph = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
    let mut roles = vec![Role::Input { block: 0 }; 4];
    roles[0] = Role::Aux {
        fixed: false,
        block: Some(0),
    };
    exact_vs_mc(&cluster_sum(&graph, &roles, 1, 3, 0.1).unwrap(), &BoolExpr::parity(3), 4);
}
