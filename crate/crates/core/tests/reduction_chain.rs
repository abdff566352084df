use noisy_parity::instances::{tiny_protocol, TinyLimits};
use noisy_parity::reductions::{protocol_to_read_once, ChainOptions};

#[test]
fn chain_is_monotone_on_tiny_protocols() {
    let limits = TinyLimits::default();
    let opts = ChainOptions::default();
    for i in 0..60 {
        let inst = tiny_protocol(7, i, &limits);
        let chain = protocol_to_read_once(&inst.protocol, &inst.mu, &opts)
            .unwrap_or_else(|e| panic!("instance {i}: {e}"));
        let r = &chain.report;
        assert!(r.monotone, "instance {i}: {:?}", r.advantages);
        assert!(r.simulation_tv.unwrap() <= 1e-12, "instance {i}");
        assert!(r.tree_tv.unwrap() <= 1e-12, "instance {i}");
        assert!(chain.read_once.is_read_once(), "instance {i}");
        for c in &r.certificates {
            assert!(c.holds, "instance {i}: {c:?}");
        }
    }
}

#[test]
fn chain_report_serialises() {
    let inst = tiny_protocol(7, 0, &TinyLimits::default());
    let chain = protocol_to_read_once(&inst.protocol, &inst.mu, &ChainOptions::default()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&chain.report).unwrap();
    assert!(v.get("advantages").is_some());
}
