//! Deterministic randomness: one explicit 64-bit seed per experiment, child
//! streams derived per purpose, and fixed-shard parallel maps whose results
//! are reduced in index order (thread-count independent).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Child seed for a named stream. Distinct labels and indices give
/// independent-looking streams; the derivation is pure arithmetic so it is
/// stable across platforms.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(label)).wrapping_add(index))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed shard size used by every parallel scan in the crate.
pub const SHARD: usize = 1 << 16;

/// Runs `f` over fixed-size index shards in parallel and returns the per-shard
/// results in shard order. Callers fold the vector sequentially, which makes
/// floating-point reductions independent of the number of worker threads.
pub fn map_shards<T: Send, F: Fn(usize, std::ops::Range<usize>) -> T + Sync>(
    len: usize,
    f: F,
) -> Vec<T> {
    let shards = len.div_ceil(SHARD);
    (0..shards)
        .into_par_iter()
        .map(|s| {
            let lo = s * SHARD;
            let hi = (lo + SHARD).min(len);
            f(s, lo..hi)
        })
        .collect()
}

/// Sum of `f(i)` over `0..len`, sharded; bit-stable for a fixed shard size.
pub fn sharded_sum<F: Fn(usize) -> f64 + Sync>(len: usize, f: F) -> f64 {
    map_shards(len, |_, r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

/// A point drawn uniformly from the unit sphere in `R^n` (normalized
/// Gaussian vector).
pub fn uniform_direction<R: Rng>(rng: &mut R, n: usize, out: &mut [f64]) {
    use rand_distr::StandardNormal;
    debug_assert_eq!(out.len(), n);
    loop {
        let mut norm2 = 0.0;
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
            norm2 += *x * *x;
        }
        if norm2 > 1e-12 {
            let inv = 1.0 / norm2.sqrt();
            for x in out.iter_mut() {
                *x *= inv;
            }
            return;
        }
    }
}

/// Haar-ish random rotation in `O(n)` with determinant +1: QR of a Gaussian
/// matrix with the sign convention fixed, reflections flipped away.
pub fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> nalgebra::DMatrix<f64> {
    use rand_distr::StandardNormal;
    let g = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for i in 0..n {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}
