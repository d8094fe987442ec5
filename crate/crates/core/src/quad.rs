//! Adaptive Gauss–Kronrod quadrature and the radial integrals
//! `∫ t^{n-1} (1-t²)^β g(t) dt` that every box measure reduces to.
//!
//! The endpoint singularity at `t = 1` (for `β < 0`) is removed in two steps:
//! the substitution `u = 1 - t²` moves it to `u = 0`, and `w = u^{β+1}`
//! flattens the power so plain adaptive refinement converges at machine
//! accuracy. Everything here is pure and thread-safe.

// 7/15 Gauss–Kronrod nodes and weights on [-1, 1] (QUADPACK values).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

#[derive(Debug, Clone, Copy)]
pub struct Quad {
    pub value: f64,
    pub abs_error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let fs = f(c - x) + f(c + x);
        kron += WGK[j] * fs;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fs;
        }
    }
    kron *= h;
    gauss *= h;
    ((kron), (kron - gauss).abs().max(1e-300))
}

/// Adaptive integration of `f` over `[a, b]`, splitting the worst panel
/// until the accumulated error estimate meets `rel_tol` (or `abs_tol`).
pub fn adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Quad {
    if a == b {
        return Quad { value: 0.0, abs_error: 0.0 };
    }
    // (err, counter) keys a deterministic worst-first heap.
    #[derive(PartialEq)]
    struct Panel {
        err: f64,
        id: u64,
        a: f64,
        b: f64,
        val: f64,
    }
    impl Eq for Panel {}
    impl Ord for Panel {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.err
                .partial_cmp(&o.err)
                .unwrap()
                .then(o.id.cmp(&self.id))
        }
    }
    impl PartialOrd for Panel {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }

    let mut heap = std::collections::BinaryHeap::new();
    let (v, e) = gk15(&f, a, b);
    let mut total_v = v;
    let mut total_e = e;
    let mut id = 0u64;
    heap.push(Panel { err: e, id, a, b, val: v });
    while total_e > abs_tol.max(rel_tol * total_v.abs()) && heap.len() < max_panels {
        let worst = heap.pop().expect("non-empty heap");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            // interval at floating-point resolution; keep as is
            heap.push(Panel { err: 0.0, ..worst });
            continue;
        }
        let (v1, e1) = gk15(&f, worst.a, m);
        let (v2, e2) = gk15(&f, m, worst.b);
        total_v += v1 + v2 - worst.val;
        total_e += e1 + e2 - worst.err;
        id += 1;
        heap.push(Panel { err: e1, id, a: worst.a, b: m, val: v1 });
        id += 1;
        heap.push(Panel { err: e2, id, a: m, b: worst.b, val: v2 });
    }
    Quad { value: total_v, abs_error: total_e }
}


const MAX_PANELS: usize = 4096;

/// `∫_lo^1 t^{n-1} (1-t²)^beta residual(t) dt` with `beta > -1` and a bounded
/// `residual`. This is the radial factor of every Carleson-box integral.
pub fn radial_tail_integral(
    n: usize,
    beta: f64,
    lo: f64,
    residual: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    rel_tol: f64,
) -> Quad {
    assert!(beta > -1.0, "beta must exceed -1");
    assert!((0.0..1.0).contains(&lo) || lo == 1.0);
    if lo >= 1.0 {
        return Quad { value: 0.0, abs_error: 0.0 };
    }
    let cap = 1.0 - lo * lo; // u = 1 - t² runs over (0, cap)
    let half_pow = 0.5 * (n as f64 - 2.0);
    let g = |u: f64| {
        let t = (1.0 - u).max(0.0).sqrt();
        let body = 0.5 * (1.0 - u).max(0.0).powf(half_pow);
        match residual {
            Some(r) => body * r(t),
            None => body,
        }
    };
    if beta >= 0.0 {
        adaptive(|u| u.powf(beta) * g(u), 0.0, cap, rel_tol, 0.0, MAX_PANELS)
    } else {
        // w = (u/cap)^{1+beta} removes the power singularity at u = 0.
        let p = 1.0 + beta;
        let scale = cap.powf(p) / p;
        let q = adaptive(
            |w| g(cap * w.powf(1.0 / p)),
            0.0,
            1.0,
            rel_tol,
            0.0,
            MAX_PANELS,
        );
        Quad { value: scale * q.value, abs_error: scale * q.abs_error }
    }
}

/// `∫_lo^hi t^{n-1} (1-t²)^beta dt` (general bounds; singular only at t=1).
pub fn radial_band_integral(n: usize, beta: f64, lo: f64, hi: f64, rel_tol: f64) -> Quad {
    assert!(lo <= hi);
    if hi < 1.0 {
        return adaptive(
            |t| t.powi(n as i32 - 1) * (1.0 - t * t).powf(beta),
            lo,
            hi,
            rel_tol,
            0.0,
            MAX_PANELS,
        );
    }
    radial_tail_integral(n, beta, lo, None, rel_tol)
}

/// Monotone cubic Hermite interpolant (Fritsch–Carlson slopes); used for the
/// tabulated radial CDF and its inverse.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() == ys.len() && xs.len() >= 2);
        let n = xs.len();
        let mut d = vec![0.0; n - 1];
        for i in 0..n - 1 {
            let h = xs[i + 1] - xs[i];
            assert!(h > 0.0, "abscissae must increase");
            d[i] = (ys[i + 1] - ys[i]) / h;
        }
        let mut ms = vec![0.0; n];
        ms[0] = d[0];
        ms[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            ms[i] = if d[i - 1] * d[i] <= 0.0 {
                0.0
            } else {
                0.5 * (d[i - 1] + d[i])
            };
        }
        // clamp slopes so the interpolant stays monotone
        for i in 0..n - 1 {
            if d[i] == 0.0 {
                ms[i] = 0.0;
                ms[i + 1] = 0.0;
            } else {
                let a = ms[i] / d[i];
                let b = ms[i + 1] / d[i];
                let s = a * a + b * b;
                if s > 9.0 {
                    let tau = 3.0 / s.sqrt();
                    ms[i] = tau * a * d[i];
                    ms[i + 1] = tau * b * d[i];
                }
            }
        }
        Self { xs, ys, ms }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ms[i] + h01 * self.ys[i + 1] + h11 * h * self.ms[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = adaptive(|x| 3.0 * x * x, 0.0, 2.0, 1e-14, 0.0, 64);
        assert!((q.value - 8.0).abs() < 1e-12);
    }

    #[test]
    fn sin_integral() {
        let q = adaptive(f64::sin, 0.0, std::f64::consts::PI, 1e-13, 0.0, 256);
        assert!((q.value - 2.0).abs() < 1e-11);
    }

    #[test]
    fn radial_matches_closed_forms() {
        // ∫_0^1 t^2 dt = 1/3 ; ∫_0^1 t^2 (1-t^2) dt = 2/15
        let a = radial_tail_integral(3, 0.0, 0.0, None, 1e-13);
        assert!((a.value - 1.0 / 3.0).abs() < 1e-12);
        let b = radial_tail_integral(3, 1.0, 0.0, None, 1e-13);
        assert!((b.value - 2.0 / 15.0).abs() < 1e-12);
        // ∫_{0.5}^1 t^2 (1-t^2) dt, plain antiderivative
        let c = radial_band_integral(3, 1.0, 0.5, 1.0, 1e-13);
        let exact = (1.0f64 / 3.0 - 1.0 / 5.0) - (0.125 / 3.0 - 0.03125 / 5.0);
        assert!((c.value - exact).abs() < 1e-13);
    }

    #[test]
    fn singular_exponent_converges() {
        // ∫_0^1 t^2 (1-t^2)^{-0.9} dt  vs  (1/2) B(3/2, 0.1)
        let q = radial_tail_integral(3, -0.9, 0.0, None, 1e-12);
        let exact = 0.5 * statrs::function::beta::beta(1.5, 0.1);
        assert!(
            (q.value - exact).abs() < 1e-9 * exact,
            "got {} want {exact}",
            q.value
        );
    }

    #[test]
    fn singular_band_with_residual() {
        // residual (1-t^2)^{0.7} folded in by hand must equal shifted exponent
        let r = |t: f64| (1.0 - t * t).powf(0.7);
        let a = radial_tail_integral(3, -0.5, 0.3, Some(&r), 1e-12);
        let b = radial_tail_integral(3, 0.2, 0.3, None, 1e-12);
        assert!((a.value - b.value).abs() < 1e-10 * b.value);
    }

    #[test]
    fn monotone_cubic_is_monotone_and_interpolates() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * (3.0 - 2.0 * x)).collect();
        let m = MonotoneCubic::new(xs.clone(), ys.clone());
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.eval(*x) - y).abs() < 1e-12);
        }
        let mut prev = -1.0;
        for i in 0..=1000 {
            let v = m.eval(i as f64 / 1000.0);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }
}
