//! The positive dyadic operator and its surroundings, all driven by one
//! shared sample pool.
//!
//! Every box integral is a pool sum taken in a single pass: a point
//! contributes to the boxes of its root-to-leaf chain down to the deepest
//! level whose box still contains it radially, so one bucket write at that
//! deepest cube plus one upward aggregation gives every `∫_box · dnu_alpha`
//! at once. Cached box masses are the same pool sums, which makes operator
//! application, kernel evaluation and norm estimation exactly consistent
//! with each other (the identities hold to float reassociation, not to
//! Monte Carlo error).
//!
//! Pool scans run over fixed shards merged in index order; results are
//! independent of the thread count.

mod norm;
mod rdf;

pub use norm::{operator_norm, NormReport};
pub use rdf::{phi, RdfOperator, RdfProperties};

use rayon::prelude::*;
use thiserror::Error;

use crate::dyadic::{AdjacentFamily, CubeId, CubeTree};
use crate::geometry::BallPoint;
use crate::measure::AlphaMeasure;
use crate::rng::{derive_seed, map_shards, rng_from, uniform_direction};
use crate::weights::Weight;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("power iteration did not reach tolerance: estimate {estimate}, residual {residual} after {iterations} iterations")]
    NonConvergence { estimate: f64, residual: f64, iterations: usize },
    #[error("pool and family dimensions disagree")]
    DimensionMismatch,
}

/// Seeded quasi-random points of `B_n` distributed per `nu_alpha`, with the
/// leaf cell and the deepest radially-qualifying level cached per system.
#[derive(Debug, Clone)]
pub struct SamplePool {
    n: usize,
    m: usize,
    seed: u64,
    coords: Vec<f64>,
    radius: Vec<f64>,
    one_minus_sq: Vec<f64>,
    leaves: Vec<Vec<CubeId>>,
    kstar: Vec<Vec<u8>>,
}

impl SamplePool {
    pub fn build(m: usize, ctx: &AlphaMeasure, family: &AdjacentFamily, seed: u64) -> Self {
        let n = ctx.dim();
        assert_eq!(n, family.tree().dim());
        let sampler = ctx.radial_sampler();
        let shards = map_shards(m, |s, range| {
            let mut rng = rng_from(derive_seed(seed, "pool", s as u64));
            let len = range.len();
            let mut coords = vec![0.0; len * n];
            let mut radius = vec![0.0; len];
            let mut dir = vec![0.0; n];
            for i in 0..len {
                uniform_direction(&mut rng, n, &mut dir);
                let t = sampler.sample(&mut rng).clamp(1e-12, 1.0 - 1e-15);
                for (k, d) in dir.iter().enumerate() {
                    coords[i * n + k] = t * d;
                }
                radius[i] = t;
            }
            (coords, radius)
        });
        let mut coords = Vec::with_capacity(m * n);
        let mut radius = Vec::with_capacity(m);
        for (c, r) in shards {
            coords.extend_from_slice(&c);
            radius.extend_from_slice(&r);
        }
        let one_minus_sq: Vec<f64> = radius.iter().map(|r| 1.0 - r * r).collect();

        let tree = family.tree();
        let mut leaves = Vec::with_capacity(family.systems());
        let mut kstar = Vec::with_capacity(family.systems());
        for t in 0..family.systems() {
            let per: Vec<(CubeId, u8)> = (0..m)
                .into_par_iter()
                .map(|i| {
                    let leaf = family.locate_leaf(t, &coords[i * n..(i + 1) * n]);
                    let k = deepest_qualifying(tree, leaf, radius[i]);
                    (leaf, k)
                })
                .collect();
            leaves.push(per.iter().map(|x| x.0).collect());
            kstar.push(per.iter().map(|x| x.1).collect());
        }
        Self { n, m, seed, coords, radius, one_minus_sq, leaves, kstar }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coords(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.radius[i]
    }

    pub fn one_minus_sq(&self, i: usize) -> f64 {
        self.one_minus_sq[i]
    }

    pub fn leaf(&self, system: usize, i: usize) -> CubeId {
        self.leaves[system][i]
    }

    /// Deepest level whose box contains point `i` radially (0 = none).
    pub fn deepest_level(&self, system: usize, i: usize) -> usize {
        self.kstar[system][i] as usize
    }

    pub fn weight_values(&self, w: &Weight) -> Vec<f64> {
        (0..self.m)
            .into_par_iter()
            .map(|i| w.eval(self.coords(i), self.one_minus_sq[i]))
            .collect()
    }

    /// Raw per-cube sums `Σ_{x_i in box Q} v(i)` over the whole tree of one
    /// system, in one sharded pass plus one upward sweep.
    pub fn box_sums<F: Fn(usize) -> f64 + Sync>(
        &self,
        family: &AdjacentFamily,
        system: usize,
        v: F,
    ) -> Vec<f64> {
        let tree = family.tree();
        let leaves = &self.leaves[system];
        let kstar = &self.kstar[system];
        let shards = map_shards(self.m, |_, range| {
            let mut bucket = vec![0.0f64; tree.len()];
            for i in range {
                let k = kstar[i] as usize;
                if k == 0 {
                    continue;
                }
                let q = tree.ancestor_at(leaves[i], k);
                bucket[q as usize] += v(i);
            }
            bucket
        });
        let mut sums = vec![0.0f64; tree.len()];
        for sh in shards {
            for (a, b) in sums.iter_mut().zip(sh) {
                *a += b;
            }
        }
        aggregate_up(tree, &mut sums);
        sums
    }

    /// Per-cube pool occupancy of the boxes of one system.
    pub fn box_counts(&self, family: &AdjacentFamily, system: usize) -> Vec<u32> {
        let tree = family.tree();
        let leaves = &self.leaves[system];
        let kstar = &self.kstar[system];
        let shards = map_shards(self.m, |_, range| {
            let mut bucket = vec![0u32; tree.len()];
            for i in range {
                let k = kstar[i] as usize;
                if k == 0 {
                    continue;
                }
                let q = tree.ancestor_at(leaves[i], k);
                bucket[q as usize] += 1;
            }
            bucket
        });
        let mut counts = vec![0u32; tree.len()];
        for sh in shards {
            for (a, b) in counts.iter_mut().zip(sh) {
                *a += b;
            }
        }
        // upward aggregation in integer arithmetic
        for level in (2..=tree.depth()).rev() {
            let range = tree.level_range(level);
            for q in range {
                let p = tree.parent_of(q as CubeId).expect("non-root");
                counts[p as usize] += counts[q];
            }
        }
        counts
    }
}

fn deepest_qualifying(tree: &CubeTree, leaf: CubeId, radius: f64) -> u8 {
    // heights shrink along the chain, so the qualifying prefix is contiguous
    let gap = 1.0 - radius;
    let mut q = leaf;
    let mut level = tree.depth();
    loop {
        if tree.height(q) > gap {
            return level as u8;
        }
        match tree.parent_of(q) {
            Some(p) => {
                q = p;
                level -= 1;
            }
            None => return 0,
        }
    }
}

/// Sums per cube of child subtrees into parents (levels bottom-up).
pub(crate) fn aggregate_up(tree: &CubeTree, sums: &mut [f64]) {
    for level in (2..=tree.depth()).rev() {
        let range = tree.level_range(level);
        for q in range {
            let p = tree.parent_of(q as CubeId).expect("non-root");
            sums[p as usize] += sums[q];
        }
    }
}

/// Ancestor prefix sums: `A_Q = x_Q + A_parent` (cube ids are level-ordered).
pub(crate) fn ancestor_prefix(tree: &CubeTree, x: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; x.len()];
    for q in 0..x.len() {
        let add = match tree.parent_of(q as CubeId) {
            Some(p) => a[p as usize],
            None => 0.0,
        };
        a[q] = x[q] + add;
    }
    a
}

/// `(G_w x)_Q = Σ_R |Q∩R|_w x_R` for box Grams: nesting makes every
/// intersection the deeper box, so one ancestor pass and one subtree pass
/// suffice.
pub(crate) fn gram_apply(tree: &CubeTree, w_box: &[f64], x: &[f64]) -> Vec<f64> {
    let a = ancestor_prefix(tree, x);
    let mut s: Vec<f64> = x.iter().zip(w_box).map(|(xi, wi)| xi * wi).collect();
    aggregate_up(tree, &mut s);
    (0..x.len())
        .map(|q| w_box[q] * a[q] + s[q] - w_box[q] * x[q])
        .collect()
}

/// A function of the form `Σ_Q c_Q · χ_boxQ` over one system's cubes.
#[derive(Debug, Clone)]
pub struct BoxFunction {
    pub system: usize,
    pub coeffs: Vec<f64>,
    /// Cubes whose pool occupancy was below the reliability floor.
    pub unreliable: Vec<CubeId>,
}

impl BoxFunction {
    pub fn csv_rows(&self) -> impl Iterator<Item = (usize, CubeId, f64)> + '_ {
        let t = self.system;
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(q, c)| (t, q as CubeId, *c))
    }
}

/// The family bound to a pool: cached empirical box masses `|boxQ|_alpha`
/// (pool counts / M) and occupancies per system.
pub struct FamilyOperator<'a> {
    pub family: &'a AdjacentFamily,
    pub pool: &'a SamplePool,
    box_alpha: Vec<Vec<f64>>,
    occupancy: Vec<Vec<u32>>,
}

impl<'a> FamilyOperator<'a> {
    pub fn new(family: &'a AdjacentFamily, pool: &'a SamplePool) -> Self {
        let mut box_alpha = Vec::with_capacity(family.systems());
        let mut occupancy = Vec::with_capacity(family.systems());
        for t in 0..family.systems() {
            let counts = pool.box_counts(family, t);
            box_alpha.push(counts.iter().map(|c| *c as f64 / pool.len() as f64).collect());
            occupancy.push(counts);
        }
        Self { family, pool, box_alpha, occupancy }
    }

    pub fn tree(&self) -> &CubeTree {
        self.family.tree()
    }

    pub fn box_alpha(&self, t: usize) -> &[f64] {
        &self.box_alpha[t]
    }

    pub fn occupancy(&self, t: usize) -> &[u32] {
        &self.occupancy[t]
    }

    /// Walks the qualifying chain of an arbitrary point of the ball:
    /// `f(cube)` is called for every box of system `t` containing it.
    pub fn for_qualifying_chain<F: FnMut(CubeId)>(&self, t: usize, coords: &[f64], mut f: F) {
        let tree = self.tree();
        let r2: f64 = coords.iter().map(|c| c * c).sum();
        let radius = r2.sqrt();
        if radius <= 0.0 || radius >= 1.0 {
            return;
        }
        let mut chain = Vec::with_capacity(tree.depth());
        self.family.locate(t, coords, &mut chain);
        let gap = 1.0 - radius;
        for q in chain {
            if tree.height(q) > gap {
                f(q);
            } else {
                break;
            }
        }
    }

    /// `Σ_t K^t(x, y)`: per system, the common chain prefix of the two
    /// points contributes `1/|boxQ|_alpha` wherever both qualify radially.
    /// Boxes never hit by the pool are invisible (they carry no mass in any
    /// pool-discretized quantity).
    pub fn kernel_sum(&self, x: &BallPoint, y: &BallPoint) -> f64 {
        self.kernel_sum_raw(x.coords(), y.coords())
    }

    pub fn kernel_sum_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.family.systems())
            .map(|t| self.kernel_sum_system(t, x, y))
            .sum()
    }

    pub fn kernel_sum_system(&self, t: usize, x: &[f64], y: &[f64]) -> f64 {
        let tree = self.tree();
        let rx = crate::geometry::norm(x);
        let ry = crate::geometry::norm(y);
        if rx <= 0.0 || rx >= 1.0 || ry <= 0.0 || ry >= 1.0 {
            return 0.0;
        }
        let (mut cx, mut cy) = (Vec::new(), Vec::new());
        self.family.locate(t, x, &mut cx);
        self.family.locate(t, y, &mut cy);
        let gap = (1.0 - rx).max(1.0 - ry);
        let alpha = &self.box_alpha[t];
        let mut acc = 0.0;
        for (qx, qy) in cx.iter().zip(&cy) {
            if qx != qy {
                break;
            }
            if tree.height(*qx) <= gap {
                break;
            }
            let a = alpha[*qx as usize];
            if a > 0.0 {
                acc += 1.0 / a;
            }
        }
        acc
    }

    /// Kernel between two pool points, using the cached chains.
    pub fn kernel_sum_pool(&self, i: usize, j: usize) -> f64 {
        let tree = self.tree();
        let mut acc = 0.0;
        for t in 0..self.family.systems() {
            let k = self.pool.deepest_level(t, i).min(self.pool.deepest_level(t, j));
            if k == 0 {
                continue;
            }
            let qi = tree.ancestor_at(self.pool.leaf(t, i), k);
            let qj = tree.ancestor_at(self.pool.leaf(t, j), k);
            // walk up to the common ancestor, then sum the shared prefix
            let (mut a, mut b, mut lvl) = (qi, qj, k);
            while a != b {
                a = tree.parent_of(a).expect("common root");
                b = tree.parent_of(b).expect("common root");
                lvl -= 1;
            }
            let alpha = &self.box_alpha[t];
            let mut q = a;
            for _ in 0..lvl {
                let m = alpha[q as usize];
                if m > 0.0 {
                    acc += 1.0 / m;
                }
                match tree.parent_of(q) {
                    Some(p) => q = p,
                    None => break,
                }
            }
        }
        acc
    }

    /// `T^t_{w,alpha} f`: one pool pass for `Σ_box f·w dnu_alpha`, one
    /// upward sweep, then division by the cached box masses. Coefficients
    /// of never-hit boxes are zero.
    pub fn apply(&self, t: usize, fw: &[f64]) -> BoxFunction {
        let m = self.pool.len() as f64;
        let sums = self.pool.box_sums(self.family, t, |i| fw[i]);
        let alpha = &self.box_alpha[t];
        let coeffs: Vec<f64> = sums
            .iter()
            .zip(alpha)
            .map(|(s, a)| if *a > 0.0 { (s / m) / a } else { 0.0 })
            .collect();
        let unreliable = self.occupancy[t]
            .iter()
            .enumerate()
            .filter(|(_, c)| **c < crate::weights::MIN_OCCUPANCY)
            .map(|(q, _)| q as CubeId)
            .collect();
        BoxFunction { system: t, coeffs, unreliable }
    }

    /// `T^t_{w,alpha} f` from a function and a weight (`fw = f·w` pointwise).
    pub fn apply_weighted(&self, t: usize, f: &[f64], w: &Weight) -> BoxFunction {
        let wv = self.pool.weight_values(w);
        let fw: Vec<f64> = f.iter().zip(&wv).map(|(a, b)| a * b).collect();
        self.apply(t, &fw)
    }

    /// Pointwise evaluation of a box function at an arbitrary ball point.
    pub fn eval_box_function(&self, g: &BoxFunction, coords: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_qualifying_chain(g.system, coords, |q| acc += g.coeffs[q as usize]);
        acc
    }

    /// Pointwise evaluation at a pool point via the cached chain.
    pub fn eval_box_function_pool(&self, g: &BoxFunction, i: usize) -> f64 {
        let tree = self.tree();
        let k = self.pool.deepest_level(g.system, i);
        if k == 0 {
            return 0.0;
        }
        let mut q = tree.ancestor_at(self.pool.leaf(g.system, i), k);
        let mut acc = g.coeffs[q as usize];
        while let Some(p) = tree.parent_of(q) {
            acc += g.coeffs[p as usize];
            q = p;
        }
        acc
    }

    /// `L²(w dnu_alpha)` pool norm of pointwise values.
    pub fn weighted_l2(&self, values: &[f64], w_vals: &[f64]) -> f64 {
        let m = self.pool.len();
        (crate::rng::sharded_sum(m, |i| values[i] * values[i] * w_vals[i]) / m as f64).sqrt()
    }
}

/// The dyadic maximal operator of one system with respect to `w dnu_alpha`:
/// max over the qualifying chain of `w`-averages of `|f|`.
pub struct MaximalOperator<'a, 'b> {
    op: &'b FamilyOperator<'a>,
    system: usize,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl<'a, 'b> MaximalOperator<'a, 'b> {
    pub fn new(op: &'b FamilyOperator<'a>, system: usize, f: &[f64], w_vals: &[f64]) -> Self {
        let num = op
            .pool
            .box_sums(op.family, system, |i| f[i].abs() * w_vals[i]);
        let den = op.pool.box_sums(op.family, system, |i| w_vals[i]);
        Self { op, system, num, den }
    }

    pub fn at(&self, coords: &[f64]) -> f64 {
        let mut best = 0.0f64;
        self.op.for_qualifying_chain(self.system, coords, |q| {
            let d = self.den[q as usize];
            if d > 0.0 {
                best = best.max(self.num[q as usize] / d);
            }
        });
        best
    }

    pub fn at_pool(&self, i: usize) -> f64 {
        let tree = self.op.tree();
        let k = self.op.pool.deepest_level(self.system, i);
        if k == 0 {
            return 0.0;
        }
        let mut q = tree.ancestor_at(self.op.pool.leaf(self.system, i), k);
        let mut best = 0.0f64;
        loop {
            let d = self.den[q as usize];
            if d > 0.0 {
                best = best.max(self.num[q as usize] / d);
            }
            match tree.parent_of(q) {
                Some(p) => q = p,
                None => break,
            }
        }
        best
    }
}

/// The global maximal operator with respect to `nu_alpha`: supremum of box
/// averages over a documented grid of cap boxes plus every dyadic box of
/// the family (the dyadic part makes the grid dominate all cube averages,
/// which the extrapolation inequalities need).
pub struct GlobalMaximal<'a, 'b> {
    op: &'b FamilyOperator<'a>,
    cap_counts: Vec<u32>,
    /// CSR: caps containing each pool point.
    point_caps: Vec<u32>,
    point_caps_off: Vec<u32>,
    caps: usize,
}

impl<'a, 'b> GlobalMaximal<'a, 'b> {
    pub fn new(op: &'b FamilyOperator<'a>, caps: &[crate::geometry::CapBall]) -> Self {
        let pool = op.pool;
        let n = pool.dim();
        // precompute cos thresholds and heights
        let thr: Vec<(Vec<f64>, f64, f64)> = caps
            .iter()
            .map(|c| {
                (
                    c.center.coords().to_vec(),
                    c.radius.min(std::f64::consts::PI).cos(),
                    1.0 - c.radius.min(1.0),
                )
            })
            .collect();
        let lists: Vec<Vec<u32>> = (0..pool.len())
            .into_par_iter()
            .map(|i| {
                let x = pool.coords(i);
                let r = pool.radius(i);
                let mut out = Vec::new();
                for (ci, (center, cos_r, lo)) in thr.iter().enumerate() {
                    if r > *lo {
                        let d: f64 = x.iter().zip(center).map(|(a, b)| a * b).sum();
                        if d > cos_r * r {
                            out.push(ci as u32);
                        }
                    }
                }
                out
            })
            .collect();
        let mut point_caps = Vec::new();
        let mut point_caps_off = Vec::with_capacity(pool.len() + 1);
        point_caps_off.push(0u32);
        let mut cap_counts = vec![0u32; caps.len()];
        for l in &lists {
            for &c in l {
                cap_counts[c as usize] += 1;
            }
            point_caps.extend_from_slice(l);
            point_caps_off.push(point_caps.len() as u32);
        }
        let _ = n;
        Self { op, cap_counts, point_caps, point_caps_off, caps: caps.len() }
    }

    /// `M f` at every pool point.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let pool = self.op.pool;
        let m = pool.len();
        // cap sums
        let shard_sums = map_shards(m, |_, range| {
            let mut sums = vec![0.0f64; self.caps];
            for i in range {
                let lo = self.point_caps_off[i] as usize;
                let hi = self.point_caps_off[i + 1] as usize;
                for &c in &self.point_caps[lo..hi] {
                    sums[c as usize] += f[i].abs();
                }
            }
            sums
        });
        let mut cap_sums = vec![0.0f64; self.caps];
        for sh in shard_sums {
            for (a, b) in cap_sums.iter_mut().zip(sh) {
                *a += b;
            }
        }
        let cap_avg: Vec<f64> = cap_sums
            .iter()
            .zip(&self.cap_counts)
            .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
            .collect();

        // dyadic sums per system
        let fam = self.op.family;
        let tree = self.op.tree();
        let sys_avgs: Vec<Vec<f64>> = (0..fam.systems())
            .map(|t| {
                let sums = pool.box_sums(fam, t, |i| f[i].abs());
                sums.iter()
                    .zip(self.op.occupancy(t))
                    .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
                    .collect()
            })
            .collect();

        (0..m)
            .into_par_iter()
            .map(|i| {
                let mut best = 0.0f64;
                let lo = self.point_caps_off[i] as usize;
                let hi = self.point_caps_off[i + 1] as usize;
                for &c in &self.point_caps[lo..hi] {
                    best = best.max(cap_avg[c as usize]);
                }
                for (t, avgs) in sys_avgs.iter().enumerate() {
                    let k = pool.deepest_level(t, i);
                    if k == 0 {
                        continue;
                    }
                    let mut q = tree.ancestor_at(pool.leaf(t, i), k);
                    loop {
                        best = best.max(avgs[q as usize]);
                        match tree.parent_of(q) {
                            Some(p) => q = p,
                            None => break,
                        }
                    }
                }
                best
            })
            .collect()
    }
}

/// Max over sampled pool-point pairs (above a bracket floor) of
/// `[x,y]^{-(n+alpha)} / Σ_t K^t(x,y)`; the realized domination constant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DominationReport {
    pub pairs_used: usize,
    pub pairs_skipped: usize,
    pub floor: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

pub fn domination_scan(
    op: &FamilyOperator,
    ctx: &AlphaMeasure,
    pairs: usize,
    floor: f64,
    seed: u64,
) -> DominationReport {
    let pool = op.pool;
    let mut rng = rng_from(derive_seed(seed, "domination", 0));
    let exponent = ctx.dim() as f64 + ctx.alpha();
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut max_ratio = 0.0f64;
    let mut sum = 0.0f64;
    use rand::Rng;
    while used < pairs && skipped < 100 * pairs {
        let i = rng.gen_range(0..pool.len());
        let j = rng.gen_range(0..pool.len());
        if i == j {
            continue;
        }
        let b = crate::geometry::bracket_raw(pool.coords(i), pool.coords(j));
        if b < floor {
            skipped += 1;
            continue;
        }
        let k = op.kernel_sum_pool(i, j);
        let ratio = if k > 0.0 { b.powf(-exponent) / k } else { f64::INFINITY };
        max_ratio = max_ratio.max(ratio);
        sum += ratio;
        used += 1;
    }
    DominationReport {
        pairs_used: used,
        pairs_skipped: skipped,
        floor,
        max_ratio,
        mean_ratio: if used > 0 { sum / used as f64 } else { f64::NAN },
    }
}

/// Resolution floor for domination scans: pairs closer than the leaf scale
/// cannot be dominated by a finite-depth system.
pub fn resolution_floor(tree: &CubeTree) -> f64 {
    let depth = tree.depth();
    4.0 * tree.kappa1()[depth - 1] * tree.scale(depth)
}
