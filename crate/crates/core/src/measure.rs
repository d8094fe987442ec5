//! Weighted volumes `nu_alpha = c_alpha (1-|x|²)^alpha dnu` on the unit ball:
//! normalization constants, spherical cap measure, Carleson-box measures by
//! 1-D quadrature (radial weights) or Monte Carlo (general weights), and the
//! tabulated inverse-CDF radial sampler behind every pool.
//!
//! Quadrature is pure; Monte Carlo estimators are pure given their seed.

use std::sync::OnceLock;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{BoxBase, CarlesonBox};
use crate::quad::{adaptive, radial_band_integral, radial_tail_integral, MonotoneCubic, Quad};
use crate::rng::{rng_from, uniform_direction};
use crate::weights::Weight;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("alpha must exceed -1, got {0}")]
    InvalidAlpha(f64),
    #[error("dimension must be at least 3, got {0}")]
    InvalidDimension(usize),
    #[error("Carleson box with nonpositive height")]
    EmptyBox,
    #[error("cube-based box needs a cell resolver")]
    MissingResolver,
    #[error("Monte Carlo path needs a sample budget")]
    MissingBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum EstimateMethod {
    Quadrature,
    MonteCarlo,
}

/// A measure estimate: quadrature values carry the requested tolerance,
/// Monte Carlo values a standard-error estimate.
#[derive(Debug, Clone, Copy)]
pub struct MeasureValue {
    pub value: f64,
    pub abs_error: f64,
    pub method: EstimateMethod,
}

/// The normalized weighted measure context: dimension, exponent and the
/// constant `c_alpha` with `nu_alpha(B_n) = 1`.
#[derive(Debug)]
pub struct AlphaMeasure {
    n: usize,
    alpha: f64,
    c_alpha: f64,
    sampler: OnceLock<std::sync::Arc<RadialSampler>>,
}

impl Clone for AlphaMeasure {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            alpha: self.alpha,
            c_alpha: self.c_alpha,
            sampler: OnceLock::new(),
        }
    }
}

impl AlphaMeasure {
    pub fn new(n: usize, alpha: f64) -> Result<Self, MeasureError> {
        if n < 3 {
            return Err(MeasureError::InvalidDimension(n));
        }
        if alpha <= -1.0 {
            return Err(MeasureError::InvalidAlpha(alpha));
        }
        let total = radial_tail_integral(n, alpha, 0.0, None, 1e-13).value;
        Ok(Self {
            n,
            alpha,
            c_alpha: 1.0 / (n as f64 * total),
            sampler: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_alpha(&self) -> f64 {
        self.c_alpha
    }

    /// Recomputes `nu_alpha(B_n)` from scratch; equals 1 to ~1e-12.
    pub fn total_mass(&self) -> f64 {
        self.n as f64
            * self.c_alpha
            * radial_tail_integral(self.n, self.alpha, 0.0, None, 1e-13).value
    }

    /// `nu_alpha` mass of the shell `{ |x| > lo }` per unit of base measure:
    /// the radial factor of every box integral, with an optional extra power
    /// of `(1-t²)` folded in.
    pub fn radial_factor(&self, lo: f64, extra_beta: f64) -> f64 {
        self.n as f64
            * self.c_alpha
            * radial_tail_integral(self.n, self.alpha + extra_beta, lo, None, 1e-12).value
    }

    pub fn radial_sampler(&self) -> std::sync::Arc<RadialSampler> {
        self.sampler
            .get_or_init(|| std::sync::Arc::new(RadialSampler::new(self)))
            .clone()
    }
}

const SIGMA_MAX_N: usize = 24;

fn sphere_totals() -> &'static Vec<f64> {
    static TOTALS: OnceLock<Vec<f64>> = OnceLock::new();
    TOTALS.get_or_init(|| {
        (0..=SIGMA_MAX_N)
            .map(|n| {
                if n < 3 {
                    f64::NAN
                } else {
                    adaptive(
                        |t| t.sin().powi(n as i32 - 2),
                        0.0,
                        std::f64::consts::PI,
                        1e-13,
                        0.0,
                        2048,
                    )
                    .value
                }
            })
            .collect()
    })
}

/// Normalized surface measure of the geodesic cap `B_rho(x, r)`;
/// center-independent by rotation invariance.
pub fn cap_sigma(n: usize, r: f64) -> f64 {
    assert!((3..=SIGMA_MAX_N).contains(&n));
    assert!(r > 0.0);
    let r = r.min(std::f64::consts::PI);
    if n == 3 {
        // (1 - cos r)/2 in the cancellation-free form
        return (0.5 * r).sin().powi(2);
    }
    let num = adaptive(|t| t.sin().powi(n as i32 - 2), 0.0, r, 1e-12, 0.0, 2048).value;
    num / sphere_totals()[n]
}

/// Sphere-cell data a dyadic family provides so cube-based boxes can be
/// integrated without depending on the construction details.
pub trait CellResolver: Sync {
    /// Estimated normalized surface measure of the cell, with uncertainty.
    fn cell_sigma(&self, system: usize, cube: u32) -> (f64, f64);
    fn cell_contains(&self, system: usize, cube: u32, direction: &[f64]) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct McBudget {
    pub samples: usize,
    pub seed: u64,
}

/// `∫_box w dnu_alpha`. Radial weights over cap bases go through 1-D
/// quadrature; cube bases use the resolver's cell measure for the angular
/// factor; genuinely non-radial weights fall back to stratified Monte Carlo
/// over the box (directions in the base, radii by inverse CDF).
pub fn box_measure(
    bx: &CarlesonBox,
    weight: Option<&Weight>,
    ctx: &AlphaMeasure,
    budget: Option<McBudget>,
    resolver: Option<&dyn CellResolver>,
) -> Result<MeasureValue, MeasureError> {
    if bx.height <= 0.0 {
        return Err(MeasureError::EmptyBox);
    }
    let lo = 1.0 - bx.height.min(1.0);
    let radial = weight.map_or(true, |w| w.is_radial());

    let (sigma, sigma_err, method) = match &bx.base {
        BoxBase::Cap(cap) => (cap_sigma(ctx.n, cap.radius), 0.0, EstimateMethod::Quadrature),
        BoxBase::Cube { system, cube } => {
            let r = resolver.ok_or(MeasureError::MissingResolver)?;
            let (s, se) = r.cell_sigma(*system, *cube);
            (s, se, EstimateMethod::MonteCarlo)
        }
    };

    if radial {
        let radial_part = match weight {
            None => ctx.radial_factor(lo, 0.0),
            Some(w) => {
                ctx.n as f64
                    * ctx.c_alpha
                    * w.radial_tail_integral(ctx, lo).expect("radial weight")
            }
        };
        let value = sigma * radial_part;
        let abs_error = value * 1e-10 + sigma_err * radial_part;
        return Ok(MeasureValue { value, abs_error, method });
    }

    // Non-radial weight: stratified Monte Carlo. The box mass under nu_alpha
    // factorizes exactly; only the weight average is sampled.
    let budget = budget.ok_or(MeasureError::MissingBudget)?;
    let w = weight.expect("non-radial path implies a weight");
    let box_mass = sigma * ctx.radial_factor(lo, 0.0);
    let mut rng = rng_from(budget.seed);
    let sampler = ctx.radial_sampler();
    let n = ctx.n;
    let mut dir = vec![0.0; n];
    let mut tang = vec![0.0; n];
    let mut point = vec![0.0; n];
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let m = budget.samples.max(16);
    for _ in 0..m {
        match &bx.base {
            BoxBase::Cap(cap) => sample_cap_direction(
                &mut rng,
                cap.center.coords(),
                cap.radius,
                n,
                &mut dir,
                &mut tang,
            ),
            BoxBase::Cube { system, cube } => {
                let r = resolver.ok_or(MeasureError::MissingResolver)?;
                // rejection from the sphere into the cell
                loop {
                    uniform_direction(&mut rng, n, &mut dir);
                    if r.cell_contains(*system, *cube, &dir) {
                        break;
                    }
                }
            }
        }
        let t = sampler.sample_truncated(&mut rng, lo);
        for (p, d) in point.iter_mut().zip(&dir) {
            *p = t * d;
        }
        let v = w.eval(&point, 1.0 - t * t);
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / m as f64;
    let var = (sum2 / m as f64 - mean * mean).max(0.0);
    let se = (var / m as f64).sqrt();
    Ok(MeasureValue {
        value: box_mass * mean,
        abs_error: box_mass * se + sigma_err * mean,
        method: EstimateMethod::MonteCarlo,
    })
}

/// Draws a sigma-uniform direction from the cap of the given center/radius.
fn sample_cap_direction<R: Rng>(
    rng: &mut R,
    center: &[f64],
    radius: f64,
    n: usize,
    out: &mut [f64],
    tang: &mut [f64],
) {
    let umin = radius.min(std::f64::consts::PI).cos();
    let k = 0.5 * (n as f64 - 3.0);
    let env = if umin <= 0.0 {
        1.0
    } else {
        (1.0 - umin * umin).powf(k)
    };
    let u = loop {
        let u: f64 = rng.gen_range(umin..1.0);
        if k == 0.0 {
            break u;
        }
        let d = (1.0 - u * u).powf(k);
        if rng.gen::<f64>() * env <= d {
            break u;
        }
    };
    // unit tangent orthogonal to the center
    loop {
        uniform_direction(rng, n, tang);
        let c = crate::geometry::dot(tang, center);
        let mut norm2 = 0.0;
        for (t, z) in tang.iter_mut().zip(center) {
            *t -= c * z;
            norm2 += *t * *t;
        }
        if norm2 > 1e-12 {
            let inv = 1.0 / norm2.sqrt();
            for t in tang.iter_mut() {
                *t *= inv;
            }
            break;
        }
    }
    let s = (1.0 - u * u).max(0.0).sqrt();
    for ((o, z), t) in out.iter_mut().zip(center).zip(tang.iter()) {
        *o = u * z + s * t;
    }
}

/// Comparability constants for cap-box measures: `c1 <= sigma(r)/r^{n-1} <= c2`
/// realized over a dense radius scan, and the induced two-sided band
/// `[lo, hi]` for `|box|_alpha / ((c_alpha/(alpha+1)) r^{n+alpha} (2-r)^{alpha+1})`.
#[derive(Debug, Clone, Copy)]
pub struct MeasureBand {
    pub c1: f64,
    pub c2: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn box_measure_band(ctx: &AlphaMeasure) -> MeasureBand {
    let n = ctx.n;
    let mut c1 = f64::INFINITY;
    let mut c2 = 0.0f64;
    let steps = 4096;
    for i in 0..=steps {
        let r = 10f64.powf(-6.0 + 6.0 * i as f64 / steps as f64);
        let q = cap_sigma(n, r) / r.powi(n as i32 - 1);
        c1 = c1.min(q);
        c2 = c2.max(q);
    }
    // lower branch carries the extra (3/4)^{alpha+1}; both sides carry the
    // 1/2 from ∫_{1-r}^1 t (1-t²)^alpha dt = r^{alpha+1}(2-r)^{alpha+1}/(2(alpha+1))
    let lo = n as f64 * c1 / 2f64.powi(n as i32 - 2) * 0.75f64.powf(ctx.alpha + 1.0) / 2.0;
    let hi = n as f64 * c2 / 2.0;
    MeasureBand { c1, c2, lo, hi }
}

/// Normalized ratio tested against [`box_measure_band`]: the cap-box measure
/// over the model profile `(c_alpha/(alpha+1)) r^{n+alpha} (2-r)^{alpha+1}`.
pub fn normalized_box_ratio(ctx: &AlphaMeasure, r: f64) -> f64 {
    let sigma = cap_sigma(ctx.n, r);
    let radial = radial_tail_integral(ctx.n, ctx.alpha, 1.0 - r, None, 1e-12).value;
    let model =
        r.powf(ctx.n as f64 + ctx.alpha) * (2.0 - r).powf(ctx.alpha + 1.0) / (ctx.alpha + 1.0);
    ctx.n as f64 * sigma * radial / model
}

/// Tabulated radial CDF of `nu_alpha` with monotone-cubic inverse; 10^4 knots
/// clustered toward the boundary where the density peaks or vanishes.
#[derive(Debug)]
pub struct RadialSampler {
    forward: MonotoneCubic,
    inverse: MonotoneCubic,
}

impl RadialSampler {
    const KNOTS: usize = 10_000;

    pub fn new(ctx: &AlphaMeasure) -> Self {
        let j_max = Self::KNOTS;
        let mut ts = Vec::with_capacity(j_max + 1);
        for j in 0..=j_max {
            let x = j as f64 / j_max as f64;
            ts.push(1.0 - (1.0 - x) * (1.0 - x));
        }
        let mut cdf = Vec::with_capacity(j_max + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for j in 1..=j_max {
            let q: Quad = if j == j_max {
                radial_tail_integral(ctx.n, ctx.alpha, ts[j - 1], None, 1e-12)
            } else {
                radial_band_integral(ctx.n, ctx.alpha, ts[j - 1], ts[j], 1e-12)
            };
            acc += q.value;
            cdf.push(acc);
        }
        let total = acc;
        for v in cdf.iter_mut() {
            *v /= total;
        }
        // strictly increasing abscissae are required by the interpolant;
        // merge flat spots caused by rounding
        let mut xs = Vec::with_capacity(cdf.len());
        let mut ys = Vec::with_capacity(cdf.len());
        for (t, v) in ts.iter().zip(&cdf) {
            if xs.last().map_or(true, |last| v > last) {
                xs.push(*v);
                ys.push(*t);
            }
        }
        let forward = MonotoneCubic::new(ts.clone(), cdf);
        let inverse = MonotoneCubic::new(xs, ys);
        Self { forward, inverse }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.forward.eval(t).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, v: f64) -> f64 {
        self.inverse.eval(v).clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Radius conditioned on `t > lo`.
    pub fn sample_truncated<R: Rng>(&self, rng: &mut R, lo: f64) -> f64 {
        let f0 = self.cdf(lo);
        let v = f0 + (1.0 - f0) * rng.gen::<f64>();
        self.quantile(v).max(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CapBall, SpherePoint};
    use crate::weights::Weight;

    fn cap_e1(r: f64) -> CapBall {
        CapBall::new(SpherePoint::e1(3), r)
    }

    #[test]
    fn c_alpha_examples() {
        let a0 = AlphaMeasure::new(3, 0.0).unwrap();
        assert!((a0.c_alpha() - 1.0).abs() < 1e-12);
        let a1 = AlphaMeasure::new(3, 1.0).unwrap();
        assert!((a1.c_alpha() - 2.5).abs() < 1e-11);
        assert!(AlphaMeasure::new(3, -1.0).is_err());
        assert!(AlphaMeasure::new(2, 0.0).is_err());
    }

    #[test]
    fn c_alpha_beta_function_oracle() {
        // c_alpha = 2 / (n B(n/2, alpha+1)), independent route via statrs
        for (n, alpha) in [(3usize, 0.25f64), (4, -0.5), (5, 1.75), (3, -0.9)] {
            let ctx = AlphaMeasure::new(n, alpha).unwrap();
            let oracle =
                2.0 / (n as f64 * statrs::function::beta::beta(n as f64 / 2.0, alpha + 1.0));
            assert!(
                (ctx.c_alpha() - oracle).abs() < 1e-9 * oracle,
                "n={n} alpha={alpha}: {} vs {oracle}",
                ctx.c_alpha()
            );
        }
    }

    #[test]
    fn normalization_holds() {
        for (n, alpha) in [(3usize, 0.0f64), (3, 1.0), (4, -0.5), (5, 2.0)] {
            let ctx = AlphaMeasure::new(n, alpha).unwrap();
            assert!((ctx.total_mass() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cap_sigma_examples() {
        assert!((cap_sigma(3, std::f64::consts::PI) - 1.0).abs() < 1e-12);
        assert!((cap_sigma(3, std::f64::consts::FRAC_PI_2) - 0.5).abs() < 1e-12);
        let v = cap_sigma(3, 0.5);
        assert!((v - 0.061208719054813626).abs() < 1e-12);
        assert!((cap_sigma(4, std::f64::consts::PI) - 1.0).abs() < 1e-11);
        assert!((cap_sigma(4, std::f64::consts::FRAC_PI_2) - 0.5).abs() < 1e-11);
    }

    #[test]
    fn box_measure_closed_forms() {
        // frozen oracles: sigma * (1 - 0.5^3) and 7.5 * sigma * ∫_{.5}^1 t²(1-t²)
        let ctx0 = AlphaMeasure::new(3, 0.0).unwrap();
        let bx = cap_e1(0.5).carleson_box();
        let v0 = box_measure(&bx, None, &ctx0, None, None).unwrap();
        assert_eq!(v0.method, EstimateMethod::Quadrature);
        assert!((v0.value - 0.05355762917296192).abs() < 1e-8);

        let ctx1 = AlphaMeasure::new(3, 1.0).unwrap();
        let v1 = box_measure(&bx, None, &ctx1, None, None).unwrap();
        assert!((v1.value - 0.044950153055878746).abs() < 1e-8);
    }

    #[test]
    fn box_measure_full_extent_recovers_sigma() {
        let ctx = AlphaMeasure::new(3, 0.5).unwrap();
        let cap = cap_e1(0.999999);
        let mut bx = cap.carleson_box();
        bx.height = 1.0;
        let v = box_measure(&bx, None, &ctx, None, None).unwrap();
        assert!((v.value - cap_sigma(3, cap.radius)).abs() < 1e-6);
    }

    #[test]
    fn box_measure_monotone() {
        let ctx = AlphaMeasure::new(3, 0.0).unwrap();
        let mut prev = 0.0;
        for i in 1..=8 {
            let bx = cap_e1(0.1 * i as f64).carleson_box();
            let v = box_measure(&bx, None, &ctx, None, None).unwrap().value;
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn band_constants_hold_on_scan() {
        for alpha in [0.0, 1.0] {
            let ctx = AlphaMeasure::new(3, alpha).unwrap();
            let band = box_measure_band(&ctx);
            assert!(band.c1 > 0.2 && band.c2 <= 0.2500001);
            for i in 0..400 {
                let r = 10f64.powf(-3.0 + 3.0 * i as f64 / 399.0);
                let ratio = normalized_box_ratio(&ctx, r);
                assert!(
                    ratio >= band.lo && ratio <= band.hi,
                    "alpha={alpha} r={r} ratio={ratio} band=[{}, {}]",
                    band.lo,
                    band.hi
                );
            }
        }
    }

    #[test]
    fn c2_small_radius_limit_is_quarter() {
        let ctx = AlphaMeasure::new(3, 0.0).unwrap();
        let band = box_measure_band(&ctx);
        assert!((band.c2 - 0.25).abs() < 1e-6);
    }

    #[test]
    fn radial_sampler_matches_cdf() {
        let ctx = AlphaMeasure::new(3, 1.0).unwrap();
        let s = ctx.radial_sampler();
        // closed form for n=3, alpha=1: F(t) = 7.5 (t³/3 - t⁵/5)
        let f = |t: f64| 7.5 * (t * t * t / 3.0 - t.powi(5) / 5.0);
        for t in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            assert!((s.cdf(t) - f(t)).abs() < 1e-7, "t={t}");
            let back = s.quantile(s.cdf(t));
            assert!((back - t).abs() < 1e-6);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        // radial weight pushed through the non-radial MC path: 3 SE agreement
        let ctx = AlphaMeasure::new(3, 0.0).unwrap();
        let w = Weight::general("radial in disguise", |p: &[f64]| {
            let r2: f64 = p.iter().map(|x| x * x).sum();
            (1.0 - r2).powf(0.5)
        });
        let bx = cap_e1(0.5).carleson_box();
        let mc = box_measure(
            &bx,
            Some(&w),
            &ctx,
            Some(McBudget { samples: 40_000, seed: 9 }),
            None,
        )
        .unwrap();
        let exact =
            box_measure(&bx, Some(&Weight::example(0.5, &ctx).unwrap()), &ctx, None, None).unwrap();
        assert_eq!(mc.method, EstimateMethod::MonteCarlo);
        assert!(
            (mc.value - exact.value).abs() <= 3.0 * mc.abs_error.max(1e-9),
            "mc {} exact {} se {}",
            mc.value,
            exact.value,
            mc.abs_error
        );
    }
}
