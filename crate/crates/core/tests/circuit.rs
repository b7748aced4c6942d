mod common;

use bitvi::{BitCircuit, Bitstring, FixedPointFormat, SmoothingSchedule};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn arb_format() -> impl Strategy<Value = FixedPointFormat> {
    (1u32..=10, any::<u64>()).prop_map(|(bits, seed)| format_with_bits(bits, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn entropy_matches_brute_force(fmt in arb_format(), seed in any::<u64>()) {
        let c = random_circuit(fmt, seed);
        let masses = path_product_masses(c.left_weights(), fmt.total_bits());
        let oracle = brute_force_entropy(&masses, fmt.resolution());
        prop_assert!((c.entropy() - oracle).abs() < 1e-9, "{} vs {}", c.entropy(), oracle);
    }

    #[test]
    fn leaf_masses_are_path_products(fmt in arb_format(), seed in any::<u64>()) {
        let c = random_circuit(fmt, seed);
        let oracle = path_product_masses(c.left_weights(), fmt.total_bits());
        let masses = c.leaf_masses();
        prop_assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (m, o) in masses.iter().zip(&oracle) {
            prop_assert!((m - o).abs() < 1e-14);
        }
        // Density is piecewise constant: mass = density * width in every cell.
        for (i, o) in oracle.iter().enumerate() {
            let mid = fmt.decode_index(i as u64) + 0.5 * fmt.resolution();
            prop_assert!((c.density(mid) * fmt.resolution() - o).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_inverts_inverse_cdf(fmt in arb_format(), seed in any::<u64>()) {
        let c = random_circuit(fmt, seed);
        let mut r = rng(seed ^ 1);
        for _ in 0..1000 {
            let u: f64 = r.random();
            let (x, leaf) = c.inverse_cdf(u).unwrap();
            prop_assert!((c.cdf(x) - u).abs() < 1e-9);
            let (a, b) = fmt.cell(leaf).unwrap();
            prop_assert!(a <= x && x < b);
        }
    }

    #[test]
    fn cdf_at_cell_edges_is_cumulative_mass(fmt in arb_format(), seed in any::<u64>()) {
        let c = random_circuit(fmt, seed);
        let masses = path_product_masses(c.left_weights(), fmt.total_bits());
        let mut acc = 0.0;
        for (i, m) in masses.iter().enumerate() {
            prop_assert!((c.cdf(fmt.decode_index(i as u64)) - acc).abs() < 1e-12);
            acc += m;
        }
        prop_assert_eq!(c.cdf(fmt.hi()), 1.0);
        prop_assert_eq!(c.cdf(fmt.lo()), 0.0);
    }

    #[test]
    fn sampled_leaves_are_representable(fmt in arb_format(), seed in any::<u64>()) {
        let c = random_circuit(fmt, seed);
        for d in c.sample(&mut rng(seed), 200) {
            prop_assert_eq!(fmt.encode(d.quantized).unwrap(), d.leaf);
            prop_assert_eq!(fmt.decode(d.leaf).unwrap(), d.quantized);
        }
    }

    #[test]
    fn truncation_keeps_prefix_masses(fmt in arb_format(), seed in any::<u64>(), cut in 0u32..10) {
        let keep = cut.min(fmt.frac_bits());
        prop_assume!(fmt.total_bits() - fmt.frac_bits() + keep > 0);
        let c = random_circuit(fmt, seed);
        let t = c.truncate(keep).unwrap();
        let depth = t.depth();
        prop_assert_eq!(depth, fmt.total_bits() - (fmt.frac_bits() - keep));
        let original = c.prefix_masses(depth).unwrap();
        for (a, b) in t.leaf_masses().iter().zip(&original) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Inside a kept cell the truncated density is flat.
        let (lo, hi) = t.format().cell_at(depth, 0);
        prop_assert!((t.density(lo) - t.density(0.5 * (lo + hi))).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip(fmt in arb_format(), seed in any::<u64>()) {
        let c = random_circuit(fmt, seed);
        let back = BitCircuit::from_json(&c.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn encode_decode_roundtrip(fmt in arb_format(), t in 0.0f64..1.0) {
        let x = fmt.lo() + t * fmt.width();
        let bits = fmt.encode(x).unwrap();
        let v = fmt.decode(bits).unwrap();
        prop_assert!(v <= x && x < v + fmt.resolution());
        prop_assert_eq!(fmt.encode(v).unwrap(), bits);
    }
}

#[test]
fn sample_frequencies_follow_leaf_masses() {
    let fmt = FixedPointFormat::signed(1, 2).unwrap();
    let c = random_circuit(fmt, 7);
    let n = 100_000;
    let mut counts = vec![0usize; fmt.num_cells() as usize];
    for d in c.sample(&mut rng(3), n) {
        counts[d.leaf.value() as usize] += 1;
    }
    for (k, m) in counts.iter().zip(c.leaf_masses()) {
        assert!((*k as f64 / n as f64 - m).abs() < 0.01);
    }
}

#[test]
fn uniform_circuit_matches_closed_forms() {
    let fmt: FixedPointFormat = "s2i3f".parse().unwrap();
    let c = BitCircuit::uniform(fmt, SmoothingSchedule::default()).unwrap();
    assert!((c.entropy() - 8f64.ln()).abs() < 1e-12);
    assert!((c.density(1.3) - 0.125).abs() < 1e-12);
    assert_eq!(c.inverse_cdf(0.25).unwrap().0, -2.0);
    assert!(c.log_density(4.0).is_infinite());
    assert!(c.inverse_cdf(1.0).is_err());
}

#[test]
fn weights_address_nodes_by_prefix() {
    let fmt: FixedPointFormat = "u0i3f".parse().unwrap();
    let c = random_circuit(fmt, 11);
    let left = c.left_weights();
    let (w0, w1) = c.weights(Bitstring::EMPTY).unwrap();
    assert_eq!(w0, left[0]);
    assert!((w0 + w1 - 1.0).abs() < 1e-15);
    let p: Bitstring = "10".parse().unwrap();
    assert_eq!(c.weights(p).unwrap().0, left[5]);
    assert!(c.weights("101".parse().unwrap()).is_err());
}
