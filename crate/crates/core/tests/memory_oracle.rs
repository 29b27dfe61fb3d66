mod support;

use dcmann::autodiff::Tape;
use dcmann::memory::{
    allocation_weighting, memory_step, parse_interface_values, DecodeFreeze, MemoryShape, MemoryState, Phase,
};
use proptest::prelude::*;
use rand::Rng;
use support::compare::oracle_gap;
use support::max_abs_diff;

#[test]
fn allocation_ties_follow_index_order() {
    let usage = [0.5, 0.2, 0.5, 0.2];
    let mut t = Tape::<f64>::new();
    let u = t.vector(usage.to_vec());
    let a = allocation_weighting(&mut t, u).unwrap();
    assert_eq!(t.value(a), support::allocation(&usage).as_slice());
    // 1 first, then 3 (tie at 0.2 broken by index)
    assert!((t.value(a)[1] - 0.8).abs() < 1e-15);
    assert!((t.value(a)[3] - 0.2 * 0.8).abs() < 1e-15);
}

#[test]
fn oracle_two_heads() {
    for seed in 0..50 {
        let gap = oracle_gap(seed, MemoryShape::new(5, 3, 2), Phase::Encode);
        assert!(gap < 1e-10, "seed {seed}: {gap}");
    }
}

proptest! {
    #[test]
    fn step_matches_oracle(seed in any::<u64>(), decode in any::<bool>()) {
        let phase = if decode { Phase::Decode } else { Phase::Encode };
        let gap = oracle_gap(seed, MemoryShape::new(4, 3, 1), phase);
        prop_assert!(gap < 1e-10, "{gap}");
    }

    #[test]
    fn allocation_matches_brute_force(usage in prop::collection::vec(0.0f64..=1.0, 1..10)) {
        let mut t = Tape::<f64>::new();
        let u = t.vector(usage.clone());
        let a = allocation_weighting(&mut t, u).unwrap();
        let want = support::allocation(&usage);
        prop_assert!(max_abs_diff(t.value(a), &want) <= 1e-12);
        // a is a sub-simplex
        prop_assert!(t.value(a).iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn invariants_survive_random_walks(seed in any::<u64>(), heads in 1usize..3) {
        let shape = MemoryShape::new(6, 4, heads);
        let mut rng = support::rng(seed);
        let mut tape = Tape::<f64>::new();
        let mut state = MemoryState::<f64>::fresh(shape).to_tape(&mut tape).unwrap();
        for _ in 0..15 {
            let scale = rng.gen_range(0.5..8.0);
            let raw = support::raw_interface(&mut rng, shape, scale);
            let iface = parse_interface_values(&raw, shape).unwrap().to_tape(&mut tape);
            state = memory_step(&mut tape, &state, &iface, Phase::Encode, DecodeFreeze::All).unwrap().state;
            let snap = state.snapshot(&tape, shape);
            prop_assert!(snap.check_invariants().is_ok(), "{:?}", snap.check_invariants());
        }
    }
}
