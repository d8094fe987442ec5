//! The iteration producing a majorant whose product with the weight lands
//! in the p = 2 dyadic weight class: the smoothing step
//! `S(h) = (M(h^{1/phi} w) / w)^phi` with `phi = (p-2)/(p-1)`, and the
//! geometric series `D(h) = Σ_k 2^{-k} S^k(h) / A^k`.
//!
//! `A` is the realized operator bound of the smoothing step over the
//! iterates actually used (any upper bound of the per-step norm ratios
//! preserves the majorant properties), reported alongside the results.

use super::{FamilyOperator, GlobalMaximal};
use crate::rng::sharded_sum;

pub fn phi(p: f64) -> f64 {
    assert!(p > 2.0, "the extrapolation step needs p > 2");
    (p - 2.0) / (p - 1.0)
}

/// Smoothing/majorant machinery bound to one pool, one weight and one
/// global maximal grid.
pub struct RdfOperator<'a, 'b> {
    pub op: &'b FamilyOperator<'a>,
    pub maximal: &'b GlobalMaximal<'a, 'b>,
    pub w_vals: &'b [f64],
    pub p: f64,
}

/// Diagnostics of one majorant computation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RdfProperties {
    /// Realized per-step norm ratios `||S^{k+1}h|| / ||S^k h||`.
    pub step_ratios: Vec<f64>,
    /// The constant used in the series (max of the observed ratios).
    pub a_bound: f64,
    pub truncation: usize,
}

impl<'a, 'b> RdfOperator<'a, 'b> {
    pub fn new(
        op: &'b FamilyOperator<'a>,
        maximal: &'b GlobalMaximal<'a, 'b>,
        w_vals: &'b [f64],
        p: f64,
    ) -> Self {
        assert!(p > 2.0);
        Self { op, maximal, w_vals, p }
    }

    /// `L^q(w dnu)` pool norm.
    pub fn lq_norm(&self, g: &[f64], q: f64) -> f64 {
        let m = self.op.pool.len();
        (sharded_sum(m, |i| g[i].abs().powf(q) * self.w_vals[i]) / m as f64).powf(1.0 / q)
    }

    /// One smoothing step; positively 1-homogeneous and subadditive.
    pub fn s_step(&self, h: &[f64]) -> Vec<f64> {
        let ph = phi(self.p);
        let inv = 1.0 / ph;
        let arg: Vec<f64> = h
            .iter()
            .zip(self.w_vals)
            .map(|(x, w)| x.abs().powf(inv) * w)
            .collect();
        let mm = self.maximal.apply(&arg);
        mm.iter()
            .zip(self.w_vals)
            .map(|(m, w)| if *w > 0.0 { (m / w).powf(ph) } else { 0.0 })
            .collect()
    }

    /// Raw iterates `h, S h, ..., S^kd h` with their norm ratios in
    /// `L^{p'/phi}(w dnu)`.
    pub fn iterates(&self, h: &[f64], kd: usize) -> (Vec<Vec<f64>>, RdfProperties) {
        let q = self.series_exponent();
        let mut out = Vec::with_capacity(kd + 1);
        out.push(h.to_vec());
        let mut ratios = Vec::with_capacity(kd);
        let mut prev_norm = self.lq_norm(h, q);
        for _ in 0..kd {
            let next = self.s_step(out.last().unwrap());
            let norm = self.lq_norm(&next, q);
            ratios.push(if prev_norm > 0.0 { norm / prev_norm } else { 0.0 });
            prev_norm = norm;
            out.push(next);
        }
        let a_bound = ratios.iter().cloned().fold(0.0, f64::max);
        (out, RdfProperties { step_ratios: ratios, a_bound, truncation: kd })
    }

    /// The exponent `p'/phi(p) = p/(p-2)` of the space the majorant acts on.
    pub fn series_exponent(&self) -> f64 {
        self.p / (self.p - 2.0)
    }

    /// Truncated majorant `Σ_{k<=kd} 2^{-k} S^k(h) / A^k` from precomputed
    /// iterates; `S` is 1-homogeneous, so scaling the raw iterates by `A^k`
    /// afterwards is exact.
    pub fn majorant_from_iterates(&self, iterates: &[Vec<f64>], a: f64) -> Vec<f64> {
        let m = iterates[0].len();
        let mut out = vec![0.0; m];
        let mut scale = 1.0;
        for it in iterates {
            for (o, v) in out.iter_mut().zip(it) {
                *o += scale * v;
            }
            scale /= 2.0 * a;
        }
        out
    }

    /// Convenience: iterates + majorant with the realized `A`.
    pub fn majorant(&self, h: &[f64], kd: usize) -> (Vec<f64>, RdfProperties) {
        let (its, mut props) = self.iterates(h, kd);
        // a zero bound only happens for h = 0; keep the series defined
        if props.a_bound <= 0.0 {
            props.a_bound = 1.0;
        }
        (self.majorant_from_iterates(&its, props.a_bound), props)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{AdjacentFamily, FamilyParams};
    use crate::geometry::{CapBall, SpherePoint};
    use crate::measure::AlphaMeasure;
    use crate::operators::SamplePool;
    use crate::weights::Weight;

    #[test]
    fn phi_examples() {
        assert!((phi(4.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((phi(3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn majorant_properties_small() {
        let ctx = AlphaMeasure::new(3, 0.0).unwrap();
        let family = AdjacentFamily::build(FamilyParams {
            n: 3,
            eta: 0.5,
            depth: 3,
            systems: 2,
            seed: 8,
            net_candidates: 30_000,
        })
        .unwrap();
        let pool = SamplePool::build(40_000, &ctx, &family, 21);
        let op = FamilyOperator::new(&family, &pool);
        let caps: Vec<CapBall> = (1..=8)
            .map(|i| CapBall::new(SpherePoint::e1(3), 0.12 * i as f64))
            .collect();
        let gm = GlobalMaximal::new(&op, &caps);
        let w = Weight::example(0.4, &ctx).unwrap();
        let wv = pool.weight_values(&w);
        let p = 4.0;
        let rdf = RdfOperator::new(&op, &gm, &wv, p);

        // h = 0 and the k = 0 truncation
        let zero = vec![0.0; pool.len()];
        let (d0, _) = rdf.majorant(&zero, 3);
        assert!(d0.iter().all(|v| *v == 0.0));

        let mut h: Vec<f64> = (0..pool.len())
            .map(|i| 0.1 + pool.one_minus_sq(i))
            .collect();
        let q = rdf.series_exponent();
        let nh = rdf.lq_norm(&h, q);
        h.iter_mut().for_each(|v| *v /= nh);

        let (its, props) = rdf.iterates(&h, 0);
        let d = rdf.majorant_from_iterates(&its, 1.0);
        assert_eq!(d, h, "kd = 0 gives back h");
        let _ = props;

        // s(1) for w == 1 and h == 1 is exactly 1
        let w1 = vec![1.0; pool.len()];
        let rdf1 = RdfOperator::new(&op, &gm, &w1, p);
        let ones = vec![1.0; pool.len()];
        let s1 = rdf1.s_step(&ones);
        assert!(s1.iter().all(|v| (*v - 1.0).abs() < 1e-12));

        // majorant dominates h pointwise and has controlled norm
        let kd = 5;
        let (d, props) = rdf.majorant(&h, kd);
        for (a, b) in h.iter().zip(&d) {
            assert!(*b >= *a - 1e-15);
        }
        let nd = rdf.lq_norm(&d, q);
        let bound = 2.0 + 2f64.powi(-(kd as i32));
        assert!(nd <= bound * 1.0 + 1e-9, "norm {nd} bound {bound}");
        assert!(props.a_bound.is_finite() && props.a_bound > 0.0);
    }
}
