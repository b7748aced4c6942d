#![allow(dead_code)]

use bitvi::{BitCircuit, FixedPointFormat, SmoothingSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A format with exactly `bits` bits, picked from `seed`.
pub fn format_with_bits(bits: u32, seed: u64) -> FixedPointFormat {
    let mut r = rng(seed);
    let signed = r.random_bool(0.5);
    let rest = bits - signed as u32;
    let int_bits = r.random_range(0..=rest.min(3));
    FixedPointFormat::new(signed, int_bits, rest - int_bits).unwrap()
}

/// Circuit with raw parameters drawn from `[-3, 3]`, far from uniform.
pub fn random_circuit(fmt: FixedPointFormat, seed: u64) -> BitCircuit {
    let mut r = rng(seed);
    let n = 2 * ((1usize << fmt.total_bits()) - 1);
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    BitCircuit::from_raw(fmt, SmoothingSchedule::quadratic(0.1).unwrap(), &raw).unwrap()
}

/// Leaf masses as explicit products of the split weights along each path.
pub fn path_product_masses(left: &[f64], depth: u32) -> Vec<f64> {
    (0..1usize << depth)
        .map(|leaf| {
            let mut k = 0;
            let mut p = 1.0;
            for level in 0..depth {
                if (leaf >> (depth - 1 - level)) & 1 == 1 {
                    p *= 1.0 - left[k];
                    k = 2 * k + 2;
                } else {
                    p *= left[k];
                    k = 2 * k + 1;
                }
            }
            p
        })
        .collect()
}

pub fn brute_force_entropy(masses: &[f64], cell_volume: f64) -> f64 {
    masses
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * (p / cell_volume).ln())
        .sum()
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
