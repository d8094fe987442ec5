//! Pointwise geometry on the unit ball `B_n` and its boundary sphere:
//! the geodesic metric, the bracket `[x,y]`, enclosing caps with their
//! Carleson boxes, and the nontangential cone regions.
//!
//! All operations are pure and stateless; call them from any thread.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension must be at least 3, got {0}")]
    DimensionTooSmall(usize),
    #[error("point lies outside the open unit ball (|x| = {0})")]
    OutsideBall(f64),
    #[error("cannot normalize a zero vector")]
    ZeroDirection,
    #[error("cone core region is empty: pi/2 - r0 <= 0 with r0 = {0}")]
    DegenerateRegion(f64),
}

/// A point of the open unit ball `B_n`, `n >= 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.len() < 3 {
            return Err(GeometryError::DimensionTooSmall(coords.len()));
        }
        let r = norm(&coords);
        if r >= 1.0 {
            return Err(GeometryError::OutsideBall(r));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn modulus(&self) -> f64 {
        norm(&self.coords)
    }

    /// Direction `x/|x|`; errors at the origin.
    pub fn direction(&self) -> Result<SpherePoint, GeometryError> {
        SpherePoint::new(self.coords.clone())
    }
}

/// A unit vector on the boundary sphere; renormalized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    pub fn new(mut coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.len() < 3 {
            return Err(GeometryError::DimensionTooSmall(coords.len()));
        }
        let r = norm(&coords);
        if r < 1e-14 {
            return Err(GeometryError::ZeroDirection);
        }
        for c in coords.iter_mut() {
            *c /= r;
        }
        Ok(Self { coords })
    }

    /// `e_1 = (1, 0, ..., 0)`.
    pub fn e1(n: usize) -> Self {
        let mut coords = vec![0.0; n];
        coords[0] = 1.0;
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Geodesic cap `B_rho(center, radius)` on the sphere, radius in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct CapBall {
    pub center: SpherePoint,
    pub radius: f64,
}

impl CapBall {
    pub fn new(center: SpherePoint, radius: f64) -> Self {
        assert!(radius > 0.0 && radius <= std::f64::consts::PI);
        Self { center, radius }
    }

    pub fn contains(&self, p: &SpherePoint) -> bool {
        geodesic_raw(self.center.coords(), p.coords()) < self.radius
    }

    /// The Carleson box over this cap; only caps of radius `< 1` carry the
    /// box of matching height, larger caps clamp to height 1.
    pub fn carleson_box(&self) -> CarlesonBox {
        CarlesonBox {
            base: BoxBase::Cap(self.clone()),
            height: self.radius.min(1.0),
        }
    }
}

/// Base of a Carleson box: a geodesic cap, or a cube of a dyadic system
/// (referenced by system index and cube id; resolved by the family).
#[derive(Debug, Clone, PartialEq)]
pub enum BoxBase {
    Cap(CapBall),
    Cube { system: usize, cube: u32 },
}

/// `{ z in B_n : z/|z| in base, 1 - h < |z| < 1 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlesonBox {
    pub base: BoxBase,
    pub height: f64,
}

impl CarlesonBox {
    /// Membership for cap-based boxes. Cube-based boxes are resolved by the
    /// owning dyadic family.
    pub fn cap_contains(&self, p: &BallPoint) -> bool {
        let BoxBase::Cap(cap) = &self.base else {
            panic!("cap_contains requires a cap base");
        };
        let r = p.modulus();
        if r <= 1.0 - self.height || r < 1e-300 {
            return false;
        }
        angle_raw(cap.center.coords(), p.coords()) < cap.radius
    }
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Geodesic distance of two unit vectors: `arccos` of the inner product,
/// clamped into [-1, 1] against floating-point drift at near-identical points.
#[inline]
pub(crate) fn geodesic_raw(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

/// Angle between two nonzero vectors of any modulus (the geodesic distance of
/// their directions). Zero vectors are treated as angle 0.
#[inline]
pub(crate) fn angle_raw(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na < 1e-300 || nb < 1e-300 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// The metric `rho(x, y) = arccos <x, y>` on the boundary sphere.
pub fn geodesic(a: &SpherePoint, b: &SpherePoint) -> f64 {
    geodesic_raw(a.coords(), b.coords())
}

/// `rho` extended to interior points through their directions.
pub fn direction_angle(x: &BallPoint, y: &BallPoint) -> f64 {
    angle_raw(x.coords(), y.coords())
}

/// `[x, y] = sqrt(|x-y|² + (1-|x|²)(1-|y|²))`, the scale of the smallest
/// Carleson box seeing both points.
pub fn bracket(x: &BallPoint, y: &BallPoint) -> f64 {
    bracket_raw(x.coords(), y.coords())
}

#[inline]
pub(crate) fn bracket_raw(x: &[f64], y: &[f64]) -> f64 {
    let mut diff2 = 0.0;
    let mut nx2 = 0.0;
    let mut ny2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        diff2 += (a - b) * (a - b);
        nx2 += a * a;
        ny2 += b * b;
    }
    (diff2 + (1.0 - nx2) * (1.0 - ny2)).max(0.0).sqrt()
}

/// Relative inflation applied to enclosing caps so that strict set
/// membership survives rounding.
const CAP_INFLATION: f64 = 1e-9;

/// Comparability floor that `[x,y] >= c * radius` satisfies for every pair;
/// reached in the limit of antipodal directions at modulus `1/sqrt(5)`.
pub const BRACKET_CAP_RATIO_FLOOR: f64 = 0.28470501736687078; // 2 / (pi sqrt 5)

/// Smallest cap whose Carleson box contains both points: centered at the
/// direction of the larger-modulus point, radius `max(1 - |smaller|, angle)`
/// (inflated by 1e-9 relative so the strict inequalities of the box hold).
///
/// Guarantees `[x,y] >= BRACKET_CAP_RATIO_FLOOR * radius`; when the radius is
/// driven by `1 - |smaller|` the stronger bound `[x,y] >= 1 - |smaller|`
/// holds. Errors only when both points sit at the origin.
pub fn enclosing_cap(x: &BallPoint, y: &BallPoint) -> Result<CapBall, GeometryError> {
    assert_eq!(x.dim(), y.dim());
    let (outer, inner) = if x.modulus() >= y.modulus() { (x, y) } else { (y, x) };
    if outer.modulus() < 1e-300 {
        return Err(GeometryError::ZeroDirection);
    }
    let theta = direction_angle(outer, inner);
    let r = (1.0 - inner.modulus()).max(theta) * (1.0 + CAP_INFLATION);
    let center = outer.direction()?;
    Ok(CapBall::new(center, r.min(std::f64::consts::PI)))
}

/// Truncated nontangential approach cone with vertex `xi`:
/// `0 < <y, xi> < 1` and `|y|² - <y, xi>² < gamma² (1 - <y, xi>)²`.
pub fn in_cone(y: &BallPoint, xi: &SpherePoint, gamma: f64) -> bool {
    assert!(gamma > 0.0);
    let t = dot(y.coords(), xi.coords());
    if t <= 0.0 || t >= 1.0 {
        return false;
    }
    let ny2 = y.coords().iter().map(|v| v * v).sum::<f64>();
    ny2 - t * t < gamma * gamma * (1.0 - t) * (1.0 - t)
}

/// Common core of all cones with vertices in `B_rho(e1, r0)`: directions
/// within `pi/2 - r0` of `e1` and modulus below `gamma / sqrt(1 + gamma²)`.
/// The origin is excluded (its direction is undefined, and it belongs to no
/// cone). Strict inequalities throughout.
pub fn in_cone_core(x: &BallPoint, gamma: f64, r0: f64) -> Result<bool, GeometryError> {
    assert!(gamma > 0.0);
    let cap = std::f64::consts::FRAC_PI_2 - r0;
    if cap <= 0.0 {
        return Err(GeometryError::DegenerateRegion(r0));
    }
    let m = x.modulus();
    if m < 1e-300 {
        return Ok(false);
    }
    if m >= gamma / (1.0 + gamma * gamma).sqrt() {
        return Ok(false);
    }
    let e1 = SpherePoint::e1(x.dim());
    Ok(angle_raw(x.coords(), e1.coords()) < cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, uniform_direction};
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sp(v: &[f64]) -> SpherePoint {
        SpherePoint::new(v.to_vec()).unwrap()
    }
    fn bp(v: &[f64]) -> BallPoint {
        BallPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn geodesic_trivial_cases() {
        let e1 = SpherePoint::e1(3);
        let m = sp(&[-1.0, 0.0, 0.0]);
        let e2 = sp(&[0.0, 1.0, 0.0]);
        assert_eq!(geodesic(&e1, &e1), 0.0);
        assert!((geodesic(&e1, &m) - PI).abs() < 1e-15);
        assert!((geodesic(&e1, &e2) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn bracket_examples() {
        let o = bp(&[0.0, 0.0, 0.0]);
        assert!((bracket(&o, &o) - 1.0).abs() < 1e-15);
        // [x,x] = 1 - |x|²
        let x = bp(&[0.6, 0.0, 0.0]);
        assert!((bracket(&x, &x) - 0.64).abs() < 1e-15);
        // frozen oracle: sqrt(0.5 + 0.75^2) = sqrt(1.0625)
        let a = bp(&[0.5, 0.0, 0.0]);
        let b = bp(&[0.0, 0.5, 0.0]);
        assert!((bracket(&a, &b) - 1.0625f64.sqrt()).abs() < 1e-15);
        assert!((bracket(&a, &b) - 1.0307764064044151).abs() < 1e-12);
    }

    #[test]
    fn metric_axioms_sampled() {
        // triangle inequality via Binet–Cauchy holds up to 1e-10 on seeded triples
        for n in [3usize, 4, 5] {
            let mut rng = rng_from(1000 + n as u64);
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            let mut c = vec![0.0; n];
            for _ in 0..20_000 {
                uniform_direction(&mut rng, n, &mut a);
                uniform_direction(&mut rng, n, &mut b);
                uniform_direction(&mut rng, n, &mut c);
                let ab = geodesic_raw(&a, &b);
                let ac = geodesic_raw(&a, &c);
                let cb = geodesic_raw(&c, &b);
                assert!(ab <= ac + cb + 1e-10);
                // metric-vs-Euclidean equivalence
                let d = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(2.0 / PI * ab <= d + 1e-12);
                assert!(d <= ab + 1e-12);
            }
        }
    }

    #[test]
    fn enclosing_cap_examples() {
        let x = bp(&[0.9, 0.0, 0.0]);
        let y = bp(&[0.5, 0.0, 0.0]);
        let cap = enclosing_cap(&x, &y).unwrap();
        assert!((cap.radius - 0.5).abs() < 1e-8);
        assert!((cap.center.coords()[0] - 1.0).abs() < 1e-15);
        // bracket oracle: sqrt(0.16 + 0.19 * 0.75) = 0.55 exactly
        assert!((bracket(&x, &y) - 0.55).abs() < 1e-15);
        assert!(bracket(&x, &y) >= BRACKET_CAP_RATIO_FLOOR * cap.radius);

        let x = bp(&[0.99, 0.0, 0.0]);
        let y = bp(&[0.0, 0.99, 0.0]);
        let cap = enclosing_cap(&x, &y).unwrap();
        assert!((cap.radius - FRAC_PI_2).abs() < 1e-8);
    }

    #[test]
    fn enclosing_cap_zero_direction() {
        let o = bp(&[0.0, 0.0, 0.0]);
        assert_eq!(
            enclosing_cap(&o, &o).unwrap_err(),
            GeometryError::ZeroDirection
        );
    }

    #[test]
    fn enclosing_cap_containment_property() {
        // containment plus the bracket comparability floor on seeded pairs
        let mut rng = rng_from(2024);
        let mut dir = vec![0.0; 3];
        let mut worst: f64 = f64::INFINITY;
        for _ in 0..100_000 {
            let mut mk = || {
                uniform_direction(&mut rng, 3, &mut dir);
                let r: f64 = rng.gen::<f64>().powf(0.5);
                BallPoint::new(dir.iter().map(|c| c * r * 0.999).collect()).unwrap()
            };
            let x = mk();
            let y = mk();
            if x.modulus() < 1e-12 && y.modulus() < 1e-12 {
                continue;
            }
            let cap = enclosing_cap(&x, &y).unwrap();
            let b = bracket(&x, &y);
            worst = worst.min(b / cap.radius);
            assert!(b >= BRACKET_CAP_RATIO_FLOOR * cap.radius / (1.0 + 2e-9));
            if cap.radius < 1.0 {
                let bx = cap.carleson_box();
                assert!(bx.cap_contains(&x), "x outside its enclosing box");
                assert!(bx.cap_contains(&y), "y outside its enclosing box");
            }
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn cone_membership() {
        let xi = SpherePoint::e1(3);
        let y = bp(&[0.5, 0.0, 0.0]);
        assert!(in_cone(&y, &xi, 0.1));
        assert!(in_cone(&y, &xi, 2.0));
        let o = bp(&[0.0, 0.0, 0.0]);
        assert!(!in_cone(&o, &xi, 1.0));
        // <y,xi> = 0.5, tangential 0.3, gamma = 0.5: 0.09 < 0.0625 is false
        let y = bp(&[0.5, 0.3, 0.0]);
        assert!(!in_cone(&y, &xi, 0.5));
    }

    #[test]
    fn cone_core_membership() {
        let g = 0.4;
        assert!(in_cone_core(&bp(&[0.1, 0.0, 0.0]), g, 1.0).unwrap());
        assert!(!in_cone_core(&bp(&[0.5, 0.0, 0.0]), g, 1.0).unwrap());
        assert!(!in_cone_core(&bp(&[0.0, 0.1, 0.0]), g, 1.0).unwrap());
        assert_eq!(
            in_cone_core(&bp(&[0.1, 0.0, 0.0]), g, 2.0).unwrap_err(),
            GeometryError::DegenerateRegion(2.0)
        );
    }

    #[test]
    fn core_lies_in_every_cone() {
        // G ⊂ ∩_{xi in B(e1, r0)} Omega_gamma(xi), sampled
        let gamma = 0.4;
        let r0 = 1.0;
        let mut rng = rng_from(77);
        let mut dir = vec![0.0; 3];
        let e1 = SpherePoint::e1(3);
        for _ in 0..20_000 {
            uniform_direction(&mut rng, 3, &mut dir);
            let m: f64 = rng.gen::<f64>() * 0.99;
            let x = BallPoint::new(dir.iter().map(|c| c * m).collect()).unwrap();
            if !in_cone_core(&x, gamma, r0).unwrap() {
                continue;
            }
            for _ in 0..10 {
                uniform_direction(&mut rng, 3, &mut dir);
                let xi = SpherePoint::new(dir.clone()).unwrap();
                if geodesic(&xi, &e1) < r0 {
                    assert!(in_cone(&x, &xi, gamma));
                }
            }
        }
    }

    #[test]
    fn bracket_lower_bounds() {
        // [x,y]² >= (1-|y|)² and [x,y]² >= (4/pi²)|y|² theta² for |x| >= |y|
        let mut rng = rng_from(5150);
        let mut dir = vec![0.0; 4];
        for _ in 0..50_000 {
            let mut mk = || {
                uniform_direction(&mut rng, 4, &mut dir);
                let r: f64 = rng.gen::<f64>() * 0.999;
                BallPoint::new(dir.iter().map(|c| c * r).collect()).unwrap()
            };
            let (a, b) = (mk(), mk());
            let (x, y) = if a.modulus() >= b.modulus() { (a, b) } else { (b, a) };
            let br2 = bracket(&x, &y).powi(2);
            let ymod = y.modulus();
            let theta = direction_angle(&x, &y);
            assert!(br2 >= (1.0 - ymod).powi(2) - 1e-12);
            assert!(br2 >= 4.0 / (PI * PI) * ymod * ymod * theta * theta - 1e-12);
        }
    }
}
