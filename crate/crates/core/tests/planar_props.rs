use std::collections::HashSet;

use proptest::prelude::*;

use noisy_parity::harness::network_stream;
use noisy_parity::planar::{decompose, sample_network, tessellate, verify_decomposition};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn decompositions_are_sound(seed in any::<u64>(), n in 3000usize..8000, spread in 0u64..4) {
        let r = (10.0 * (n as f64).ln() / n as f64).sqrt();
        let net = sample_network(n, r, &mut network_stream(seed, n));
        let tess = tessellate(&net).unwrap();
        let l = tess.per_side();
        let s1: Vec<(usize, usize)> = (1..=l)
            .filter(|i| i % 3 == 1)
            .flat_map(|i| (1..=l).filter(|j| j % 3 == 1).map(move |j| (i, j)))
            .collect();
        let mut seen = HashSet::new();
        for &c in &s1 {
            for cell in tess.neighborhood(c, r) {
                prop_assert!(seen.insert(cell), "cell {:?} in two neighbourhoods", cell);
            }
        }

        // Uneven counts: every `spread+1`-th node transmits more.
        let counts: Vec<u64> = (0..n as u64).map(|v| 1 + (v % (spread + 1)) * 3).collect();
        let total = counts.iter().sum();
        let dec = decompose(&net, &counts, total);
        prop_assume!(dec.is_ok());
        let dec = dec.unwrap();
        let rep = verify_decomposition(net.graph(), &dec);
        prop_assert!(rep.all_pass(), "{:?}", rep);
        prop_assert!(2 * dec.k >= s1.len(), "k = {} with |S1| = {}", dec.k, s1.len());
        prop_assert_eq!(decompose(&net, &counts, total).unwrap(), dec);
    }
}
