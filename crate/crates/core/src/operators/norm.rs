//! Matrix-free operator-norm estimation for `T = T^t_{w^{-1},alpha}` viewed
//! as a map `L²(w^{-1} dnu) -> L²(w dnu)`.
//!
//! The range of `T*T` lies in the span of box indicators and box Grams
//! collapse under nesting (`boxQ ∩ boxR` is the deeper box or empty), so the
//! whole iteration runs on per-cube coefficient vectors with two tree sweeps
//! per application; no matrix is ever formed. For small systems a dense
//! generalized eigensolve provides an independent oracle.

use super::{gram_apply, FamilyOperator, OperatorError};
use crate::dyadic::CubeTree;
use crate::rng::{derive_seed, rng_from};
use crate::weights::Weight;
use rand::Rng;

/// Norm estimate with the witness lower bound, iteration diagnostics, and
/// the dense oracle when one was computed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NormReport {
    pub lower_bound: f64,
    pub power_iter_estimate: f64,
    pub iterations: usize,
    pub residual: f64,
    pub dense_oracle: Option<f64>,
}

impl NormReport {
    pub const CSV_HEADER: [&'static str; 5] = [
        "lower_bound",
        "power_iter_estimate",
        "iterations",
        "residual",
        "dense_oracle",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            format!("{}", self.lower_bound),
            format!("{}", self.power_iter_estimate),
            format!("{}", self.iterations),
            format!("{}", self.residual),
            self.dense_oracle.map_or(String::new(), |v| format!("{v}")),
        ]
    }
}

struct Sweeps<'a> {
    tree: &'a CubeTree,
    inv_alpha: Vec<f64>,
    box_w: Vec<f64>,
    box_winv: Vec<f64>,
}

impl<'a> Sweeps<'a> {
    /// `T x` in coefficient space: `D_a^{-1} G_{w^{-1}} x`.
    fn t_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = gram_apply(self.tree, &self.box_winv, x);
        for (v, ia) in y.iter_mut().zip(&self.inv_alpha) {
            *v *= ia;
        }
        y
    }

    /// `T* y`: `D_a^{-1} G_w y`.
    fn t_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut x = gram_apply(self.tree, &self.box_w, y);
        for (v, ia) in x.iter_mut().zip(&self.inv_alpha) {
            *v *= ia;
        }
        x
    }

    fn b_apply(&self, x: &[f64]) -> Vec<f64> {
        self.t_adjoint(&self.t_apply(x))
    }

    /// `<x, y>` in `L²(w^{-1} dnu)` for box functions.
    fn inner_winv(&self, x: &[f64], y: &[f64]) -> f64 {
        let gy = gram_apply(self.tree, &self.box_winv, y);
        x.iter().zip(&gy).map(|(a, b)| a * b).sum()
    }

    fn inner_w(&self, x: &[f64], y: &[f64]) -> f64 {
        let gy = gram_apply(self.tree, &self.box_w, y);
        x.iter().zip(&gy).map(|(a, b)| a * b).sum()
    }
}

/// Estimates the norm by power iteration on `T*T` in the `L²(w^{-1})`
/// geometry, starting from the constant function. Stops at the relative
/// residual `tol`; stagnation triggers seeded restarts. A dense eigensolve
/// oracle is attached for systems of at most `dense_limit` cubes.
pub fn operator_norm(
    op: &FamilyOperator,
    system: usize,
    w: &Weight,
    tol: f64,
    max_iterations: usize,
    dense_limit: usize,
) -> Result<NormReport, OperatorError> {
    let tree = op.tree();
    let m = op.pool.len() as f64;
    let wv = op.pool.weight_values(w);
    let winv = op.pool.weight_values(&w.dual(2.0).expect("p = 2 dual"));
    let box_w: Vec<f64> = op
        .pool
        .box_sums(op.family, system, |i| wv[i])
        .iter()
        .map(|s| s / m)
        .collect();
    let box_winv: Vec<f64> = op
        .pool
        .box_sums(op.family, system, |i| winv[i])
        .iter()
        .map(|s| s / m)
        .collect();
    let inv_alpha: Vec<f64> = op
        .box_alpha(system)
        .iter()
        .map(|a| if *a > 0.0 { 1.0 / a } else { 0.0 })
        .collect();
    let sweeps = Sweeps { tree, inv_alpha, box_w, box_winv };

    // start from the constant function 1 in L²(w^{-1}): x0 = T*T(1), where
    // T(1) has coefficients (∫_box w^{-1})/|box|_alpha
    let t_one: Vec<f64> = sweeps
        .box_winv
        .iter()
        .zip(&sweeps.inv_alpha)
        .map(|(s, ia)| s * ia)
        .collect();
    let mut x = sweeps.t_adjoint(&t_one);
    let nx = sweeps.inner_winv(&x, &x).sqrt();
    if !(nx > 0.0) {
        // operator is zero on the pool discretization
        return Ok(NormReport {
            lower_bound: 0.0,
            power_iter_estimate: 0.0,
            iterations: 0,
            residual: 0.0,
            dense_oracle: None,
        });
    }
    for v in x.iter_mut() {
        *v /= nx;
    }

    let mut lambda = 0.0f64;
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    let mut stagnant = 0usize;
    let mut restarts = 0usize;
    let mut best_residual = f64::INFINITY;
    while iterations < max_iterations {
        iterations += 1;
        let bx = sweeps.b_apply(&x);
        let num = sweeps.inner_winv(&bx, &x);
        let den = sweeps.inner_winv(&x, &x);
        lambda = num / den;
        // residual ||Bx - lambda x|| / (lambda ||x||) in the w^{-1} metric
        let diff: Vec<f64> = bx.iter().zip(&x).map(|(b, a)| b - lambda * a).collect();
        residual = sweeps.inner_winv(&diff, &diff).sqrt() / (lambda * den.sqrt());
        if residual <= tol {
            break;
        }
        if residual < 0.9 * best_residual {
            best_residual = residual;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        let nb = sweeps.inner_winv(&bx, &bx).sqrt();
        x = bx;
        for v in x.iter_mut() {
            *v /= nb;
        }
        if stagnant > 100 && restarts < 3 {
            // deterministic seeded perturbation to escape a stalled subspace
            restarts += 1;
            stagnant = 0;
            let mut rng = rng_from(derive_seed(op.pool.seed(), "norm-restart", restarts as u64));
            for v in x.iter_mut() {
                *v += 1e-3 * (rng.gen::<f64>() - 0.5);
            }
            let nx = sweeps.inner_winv(&x, &x).sqrt();
            for v in x.iter_mut() {
                *v /= nx;
            }
        }
    }

    // witness lower bound from the final iterate
    let tx = sweeps.t_apply(&x);
    let lower = (sweeps.inner_w(&tx, &tx) / sweeps.inner_winv(&x, &x)).sqrt();
    let estimate = lambda.max(0.0).sqrt();

    let dense_oracle = if tree.len() <= dense_limit {
        Some(dense_norm(&sweeps))
    } else {
        None
    };

    let report = NormReport {
        lower_bound: lower,
        power_iter_estimate: estimate,
        iterations,
        residual,
        dense_oracle,
    };
    if residual > tol {
        return Err(OperatorError::NonConvergence {
            estimate,
            residual,
            iterations,
        });
    }
    Ok(report)
}

/// Dense oracle: `||T||²` is the top eigenvalue of the pencil
/// `(G_s D^{-1} G_w D^{-1} G_s, G_s)` with `s = w^{-1}`; solved by
/// projecting onto the positive eigenspace of `G_s`.
fn dense_norm(sweeps: &Sweeps) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let n = sweeps.inv_alpha.len();
    let mut g_s = DMatrix::<f64>::zeros(n, n);
    let mut a_mat = DMatrix::<f64>::zeros(n, n);
    let mut unit = vec![0.0; n];
    for j in 0..n {
        unit[j] = 1.0;
        let gs = gram_apply(sweeps.tree, &sweeps.box_winv, &unit);
        for i in 0..n {
            g_s[(i, j)] = gs[i];
        }
        // A e_j = G_s B e_j
        let b = sweeps.b_apply(&unit);
        let gb = gram_apply(sweeps.tree, &sweeps.box_winv, &b);
        for i in 0..n {
            a_mat[(i, j)] = gb[i];
        }
        unit[j] = 0.0;
    }
    // symmetrize against rounding
    let g_s = (&g_s + g_s.transpose()) * 0.5;
    let a_mat = (&a_mat + a_mat.transpose()) * 0.5;
    let eig = g_s.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * max_ev)
        .collect();
    if keep.is_empty() {
        return 0.0;
    }
    let mut basis = DMatrix::<f64>::zeros(n, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt().recip();
        let v: DVector<f64> = eig.eigenvectors.column(i).into();
        basis.set_column(col, &(v * scale));
    }
    let reduced = basis.transpose() * &a_mat * &basis;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let ev = reduced.symmetric_eigen();
    ev.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{AdjacentFamily, FamilyParams};
    use crate::measure::AlphaMeasure;
    use crate::operators::SamplePool;

    fn small() -> (AlphaMeasure, AdjacentFamily, SamplePool) {
        let ctx = AlphaMeasure::new(3, 0.0).unwrap();
        let family = AdjacentFamily::build(FamilyParams {
            n: 3,
            eta: 0.5,
            depth: 2,
            systems: 1,
            seed: 3,
            net_candidates: 20_000,
        })
        .unwrap();
        let pool = SamplePool::build(60_000, &ctx, &family, 4);
        (ctx, family, pool)
    }

    #[test]
    fn trivial_weight_norm_close_to_one() {
        // w = 1: T is a sum of averaging projections; on the root alone the
        // norm is exactly 1, the finer level adds a bounded amount
        let (_ctx, family, pool) = small();
        let op = FamilyOperator::new(&family, &pool);
        let rep = operator_norm(&op, 0, &Weight::one(), 1e-9, 2000, 4000).unwrap();
        assert!(rep.power_iter_estimate >= 1.0 - 1e-6);
        assert!(rep.power_iter_estimate < 10.0);
        let oracle = rep.dense_oracle.unwrap();
        assert!(
            (rep.power_iter_estimate - oracle).abs() <= 1e-6 * oracle,
            "power {} vs dense {oracle}",
            rep.power_iter_estimate
        );
        assert!(rep.lower_bound <= rep.power_iter_estimate * (1.0 + rep.residual + 1e-12));
    }

    #[test]
    fn root_only_system_norm_is_exactly_one() {
        let ctx = AlphaMeasure::new(3, 0.0).unwrap();
        let family = AdjacentFamily::build(FamilyParams {
            n: 3,
            eta: 0.5,
            depth: 1,
            systems: 1,
            seed: 3,
            net_candidates: 5_000,
        })
        .unwrap();
        let pool = SamplePool::build(20_000, &ctx, &family, 4);
        let op = FamilyOperator::new(&family, &pool);
        let rep = operator_norm(&op, 0, &Weight::one(), 1e-10, 200, 100).unwrap();
        assert!((rep.power_iter_estimate - 1.0).abs() < 1e-9);
        assert!((rep.dense_oracle.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dense_oracle_agrees_on_weighted_system() {
        let (ctx, family, pool) = small();
        let op = FamilyOperator::new(&family, &pool);
        let w = Weight::example(0.3, &ctx).unwrap();
        let rep = operator_norm(&op, 0, &w, 1e-10, 5000, 4000).unwrap();
        let oracle = rep.dense_oracle.unwrap();
        assert!(
            (rep.power_iter_estimate - oracle).abs() <= 1e-6 * oracle,
            "power {} dense {oracle} residual {}",
            rep.power_iter_estimate,
            rep.residual
        );
    }
}
