//! Shared numerical machinery: adaptive Gauss-Kronrod quadrature, simplex
//! integration, a rank-1 lattice rule for higher dimensions, and log-space
//! helpers.

/// Integral value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralEstimate {
    pub value: f64,
    pub error: f64,
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

// Kronrod-15 abscissae on [-1, 1] (positive half) and weights; the embedded
// Gauss-7 rule supplies the error estimate. Values from QUADPACK.
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

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (fl, fr) = if x == 0.0 {
            let v = f(c);
            (v, 0.0)
        } else {
            (f(c - h * x), f(c + h * x))
        };
        let s = fl + fr;
        kronrod += wk * s;
        // Gauss points are the odd-indexed Kronrod points (centre included).
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, (kronrod - gauss) * h)
}

/// Adaptive quadrature on [a, b] by recursive bisection of the GK15 rule.
/// A fixed subdivision budget bounds the work on integrands whose error
/// estimates sit on the floating-point noise floor; leftover segments are
/// folded in with their current estimates.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> IntegralEstimate {
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut budget: u32 = 4000;
    // (a, b, value, error, depth)
    let mut stack: Vec<(f64, f64, f64, f64, u32)> = Vec::new();
    let (v, e) = gk15(f, a, b);
    stack.push((a, b, v, e.abs(), 0));
    let mut rough = v.abs().max(abs_tol);
    while let Some((lo, hi, v, e, depth)) = stack.pop() {
        if e <= abs_tol.max(rel_tol * rough) * ((hi - lo) / (b - a)).max(1e-300)
            || depth >= 48
            || budget == 0
        {
            total += v;
            total_err += e;
            continue;
        }
        budget -= 1;
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        rough = rough.max((total + v1 + v2).abs());
        stack.push((lo, mid, v1, e1.abs(), depth + 1));
        stack.push((mid, hi, v2, e2.abs(), depth + 1));
    }
    IntegralEstimate {
        value: total,
        error: total_err,
    }
}

/// Adaptive quadrature with caller-supplied interior knots (peak locations).
pub fn integrate_with_knots<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    knots: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> IntegralEstimate {
    let mut pts: Vec<f64> = vec![a];
    let mut sorted: Vec<f64> = knots.iter().cloned().filter(|&x| x > a && x < b).collect();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sorted.dedup();
    pts.extend(sorted);
    pts.push(b);
    let mut value = 0.0;
    let mut error = 0.0;
    for w in pts.windows(2) {
        let est = integrate_adaptive(f, w[0], w[1], rel_tol, abs_tol / pts.len() as f64);
        value += est.value;
        error += est.error;
    }
    IntegralEstimate { value, error }
}

/// Integrates `f(w1, w2)` over the triangle `{w1, w2 >= 0, w1 + w2 <= 1}`
/// via the Duffy map to the unit square and nested adaptive quadrature.
pub fn integrate_triangle<F: FnMut(f64, f64) -> f64>(
    f: &mut F,
    rel_tol: f64,
    abs_tol: f64,
) -> IntegralEstimate {
    let mut err_inner_max: f64 = 0.0;
    let est = integrate_adaptive(
        &mut |s: f64| {
            let inner = integrate_adaptive(
                &mut |t: f64| f(s, (1.0 - s) * t),
                0.0,
                1.0,
                rel_tol * 0.5,
                abs_tol * 0.5,
            );
            err_inner_max = err_inner_max.max(inner.error);
            inner.value * (1.0 - s)
        },
        0.0,
        1.0,
        rel_tol,
        abs_tol,
    );
    IntegralEstimate {
        value: est.value,
        error: est.error + err_inner_max,
    }
}

const LATTICE_PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Rank-1 lattice points in `[0,1]^dim` (Kronecker sequence on square roots of
/// primes) with a deterministic shift per replicate.
pub struct LatticeRule {
    alphas: Vec<f64>,
}

impl LatticeRule {
    pub fn new(dim: usize) -> LatticeRule {
        assert!(dim <= LATTICE_PRIMES.len(), "lattice dimension too large");
        LatticeRule {
            alphas: LATTICE_PRIMES[..dim]
                .iter()
                .map(|&p| (p as f64).sqrt().fract())
                .collect(),
        }
    }

    pub fn point(&self, index: u64, shift: &[f64], out: &mut [f64]) {
        for (k, a) in self.alphas.iter().enumerate() {
            out[k] = (index as f64 * a + shift[k]).fract();
        }
    }
}

/// Maps a uniform point in `[0,1]^(d-1)` to the unit simplex in `d` parts via
/// sorted spacings; the image is uniform on the simplex.
pub fn uniform_to_simplex(u: &[f64], out: &mut [f64]) {
    let d = u.len() + 1;
    debug_assert_eq!(out.len(), d);
    let mut sorted: Vec<f64> = u.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut prev = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        out[k] = s - prev;
        prev = s;
    }
    out[d - 1] = 1.0 - prev;
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}
