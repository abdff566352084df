use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use noisy_parity::advantage::*;
use noisy_parity::instances::{random_channel, random_distribution};
use noisy_parity::noise::{BitVector, RngStream};
use noisy_parity::protocol::{BoolExpr, Channel};

fn target(bits: usize, table: u64) -> BoolExpr {
    if table == 0 {
        return BoolExpr::parity(bits);
    }
    let entries = (0..1usize << bits).map(|i| (table >> i) & 1 == 1).collect();
    BoolExpr::Table(entries, (0..bits).map(BoolExpr::var).collect())
}

/// `max_a |Σ_x μ(x) f(x) Σ_c P(c|x) a(c)|` over all ±1 weightings.
fn brute_force(ch: &Channel, f: &BoolExpr, mu: &Distribution) -> f64 {
    let labels = ch.labels();
    let mut best: f64 = 0.0;
    for mask in 0u64..1 << labels.len() {
        let a = |c: u64| {
            let j = labels.iter().position(|&l| l == c).unwrap();
            if mask >> j & 1 == 1 {
                1.0
            } else {
                -1.0
            }
        };
        let mut total = 0.0;
        for (i, x) in ch.inputs().iter().enumerate() {
            let inner: f64 = ch.row(i).iter().map(|&(c, p)| p * a(c)).sum();
            total += mu.prob(x) * sign_of(f, x) * inner;
        }
        best = best.max(total.abs());
    }
    best
}

fn composed(ch: &Channel, post: &BTreeMap<u64, Vec<(u64, f64)>>, bits: usize) -> Channel {
    ch.compose(bits, |c| post[&c].clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_matches_brute_force(seed in any::<u64>(), bits in 1usize..=3, labels in 1usize..=10, table in 0u64..256) {
        let ch = random_channel(seed, 0, bits, labels);
        let mu = random_distribution(seed, 1, bits);
        let f = target(bits, table);
        let (est, weighting) = advantage_exact(&ch, &f, &mu).unwrap();
        let oracle = brute_force(&ch, &f, &mu);
        prop_assert!((est.value - oracle).abs() <= 1e-12, "{} vs {}", est.value, oracle);
        // The returned weighting attains the value.
        let check = advantage_upper_bound_check(&weighting, &ch, &f, &mu).unwrap();
        prop_assert!((check.lhs - est.value).abs() <= 1e-12);
    }

    #[test]
    fn relabeling_is_invisible(seed in any::<u64>(), bits in 1usize..=3, labels in 2usize..=8) {
        let ch = random_channel(seed, 0, bits, labels);
        let mu = random_distribution(seed, 1, bits);
        let f = BoolExpr::parity(bits);
        let mut rng = RngStream::keyed(seed, "perm", &[]);
        let mut perm: Vec<u64> = (0..16).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let post: BTreeMap<u64, Vec<(u64, f64)>> =
            ch.labels().into_iter().map(|c| (c, vec![(perm[c as usize], 1.0)])).collect();
        let relabeled = composed(&ch, &post, 4);
        let a = advantage_exact(&ch, &f, &mu).unwrap().0.value;
        let b = advantage_exact(&relabeled, &f, &mu).unwrap().0.value;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn post_processing_never_helps(seed in any::<u64>(), bits in 1usize..=3, labels in 1usize..=8, out in 1u64..=6) {
        let ch = random_channel(seed, 0, bits, labels);
        let mu = random_distribution(seed, 1, bits);
        let f = BoolExpr::parity(bits);
        let mut rng = RngStream::keyed(seed, "post", &[]);
        let post: BTreeMap<u64, Vec<(u64, f64)>> = ch
            .labels()
            .into_iter()
            .map(|c| {
                let raw: Vec<f64> = (0..out).map(|_| rng.unit()).collect();
                let total: f64 = raw.iter().sum();
                (c, raw.iter().enumerate().map(|(d, p)| (d as u64, p / total)).collect())
            })
            .collect();
        let a = advantage_exact(&ch, &f, &mu).unwrap().0.value;
        let b = advantage_exact(&composed(&ch, &post, 3), &f, &mu).unwrap().0.value;
        prop_assert!(b <= a + 1e-12, "{b} > {a}");
    }

    #[test]
    fn weightings_are_bounded_by_the_advantage(seed in any::<u64>(), bits in 1usize..=3, labels in 1usize..=8) {
        let ch = random_channel(seed, 0, bits, labels);
        let mu = random_distribution(seed, 1, bits);
        let f = BoolExpr::parity(bits);
        let mut rng = RngStream::keyed(seed, "weights", &[]);
        let a: Weighting = ch.labels().into_iter().map(|c| (c, 4.0 * rng.unit() - 2.0)).collect();
        let check = advantage_upper_bound_check(&a, &ch, &f, &mu).unwrap();
        prop_assert!(check.holds);
        let adv = advantage_exact(&ch, &f, &mu).unwrap().0.value;
        let sup = a.values().fold(0.0f64, |s, w| s.max(w.abs()));
        prop_assert!((check.rhs - sup * adv).abs() <= 1e-12);
    }

    #[test]
    fn mu_star_shape(n in 1usize..=12) {
        let mu = Distribution::mu_star(n).unwrap();
        prop_assert_eq!(mu.support_size(), n + 1);
        prop_assert!((mu.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(mu.prob(&BitVector::zeros(n)), 0.5);
    }
}

/// Uniform bit read through a channel that keeps it with probability 0.8:
/// advantage 0.6.
fn sample_bit(rng: &mut RngStream) -> (f64, u64) {
    let x = rng.bernoulli(0.5);
    let c = x ^ rng.bernoulli(0.2);
    (if x { -1.0 } else { 1.0 }, c as u64)
}

#[test]
fn mc_interval_covers_and_shrinks() {
    let runs = 40;
    let covered = (0..runs)
        .filter(|&s| {
            let est = advantage_mc(sample_bit, &McOptions::new(2000, s));
            let (lo, hi) = est.ci.unwrap();
            lo <= 0.6 && 0.6 <= hi
        })
        .count();
    // Nominal 95%; 31 of 40 is far in the lower tail of Bin(40, 0.95).
    assert!(covered >= 31, "{covered}/{runs}");

    let width = |trials| {
        let (lo, hi) = advantage_mc(sample_bit, &McOptions::new(trials, 1)).ci.unwrap();
        hi - lo
    };
    let (small, large) = (width(500), width(8000));
    assert!(large < small / 2.0, "{small} -> {large}");
}
