//! Adaptive quadrature (Gauss 7 / Kronrod 15 pairs with interval bisection)
//! and the closed-form decay-tail bounds used to certify truncated integrals
//! over the line.

use crate::error::{Error, Result};
use crate::model::DecayCertificate;

// Kronrod 15 abscissae on [-1, 1] (positive half) and weights, with the
// embedded Gauss 7 weights on the shared nodes.
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

/// Kronrod value and |K15 - G7| error estimate on [a, b].
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut kron = 0.0;
    let mut gauss = 0.0;
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (fl, fr) = if x == 0.0 {
            let v = f(c);
            (v, 0.0)
        } else {
            (f(c - hw * x), f(c + hw * x))
        };
        kron += wk * (fl + fr);
        // Gauss nodes are the odd-index Kronrod nodes.
        if i % 2 == 1 {
            gauss += WG[i / 2] * (fl + fr);
        } else if x == 0.0 {
            gauss += WG[3] * fl;
        }
    }
    (kron * hw, (kron - gauss).abs() * hw)
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Adaptive integration of `f` over [a, b] to absolute tolerance `tol`.
///
/// Panels are refined worst-first; the split schedule is deterministic so the
/// summation order (ascending by panel left endpoint) never depends on
/// threading.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<QuadResult> {
    integrate_impl(f, a, b, tol, true)
}

/// Like `integrate`, but a stalled refinement returns the achieved estimate
/// with its (larger) error instead of failing; for callers that fold the
/// achieved error into a reported budget.
pub fn integrate_lenient<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<QuadResult> {
    integrate_impl(f, a, b, tol, false)
}

fn integrate_impl<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    strict: bool,
) -> Result<QuadResult> {
    if !(b > a) {
        return Err(Error::Validation(format!("bad quadrature interval [{a}, {b}]")));
    }
    struct Panel {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
    }
    let (v0, e0) = gk15(f, a, b);
    let mut panels = vec![Panel { a, b, value: v0, error: e0 }];
    let mut evals = 15usize;
    let max_panels = 4096usize;
    loop {
        let total_err: f64 = panels.iter().map(|p| p.error).sum();
        if total_err <= tol || panels.len() >= max_panels {
            if strict && total_err > tol && panels.len() >= max_panels {
                return Err(Error::Guard(format!(
                    "adaptive quadrature stalled: err {total_err:.3e} > tol {tol:.3e} after {} panels",
                    panels.len()
                )));
            }
            // Sum left to right for a reproducible rounding pattern.
            panels.sort_by(|p, q| p.a.partial_cmp(&q.a).unwrap());
            let value = panels.iter().map(|p| p.value).sum();
            let error = panels.iter().map(|p| p.error).sum();
            return Ok(QuadResult { value, error, evaluations: evals });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.partial_cmp(&y.1.error).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        let (vl, el) = gk15(f, p.a, m);
        let (vr, er) = gk15(f, m, p.b);
        evals += 30;
        panels.push(Panel { a: p.a, b: m, value: vl, error: el });
        panels.push(Panel { a: m, b: p.b, value: vr, error: er });
    }
}

/// Closed-form bound for `C0 * \int_{|x| > X} (1+|x|)^{-delta} dx`
/// (both tails), the certificate-driven truncation bound.
pub fn decay_tail_bound(cert: &DecayCertificate, x_radius: f64) -> f64 {
    2.0 * cert.c0 * (1.0 + x_radius).powf(1.0 - cert.delta) / (cert.delta - 1.0)
}

/// Smallest X whose certificate tail (scaled by `weight`) drops below
/// `target`. Rejected for delta <= 1, where no finite X works.
pub fn radius_for_tail(cert: &DecayCertificate, weight: f64, target: f64) -> Result<f64> {
    if cert.delta <= 1.0 {
        return Err(Error::Validation(
            "tail bound target unreachable with delta <= 1".into(),
        ));
    }
    let lhs = target / (weight.max(1e-300) * 2.0 * cert.c0 / (cert.delta - 1.0));
    Ok((lhs.powf(1.0 / (1.0 - cert.delta)) - 1.0).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_exactly() {
        let r = integrate(&|x: f64| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12).unwrap();
        // antiderivative x^4/4 - x^2 + x
        let exact = (81.0 / 4.0 - 9.0 + 3.0) - (0.25 - 1.0 - 1.0);
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn integrates_peaked_function() {
        let r = integrate(&|x: f64| 1.0 / (1.0 + 400.0 * x * x), -10.0, 10.0, 1e-10).unwrap();
        let exact = (20.0f64 * 10.0).atan() / 10.0;
        assert!((r.value - exact).abs() < 1e-9, "err {}", (r.value - exact).abs());
    }

    #[test]
    fn tail_bound_matches_quadrature() {
        let cert = DecayCertificate::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let bound = decay_tail_bound(&cert, 50.0);
        let exact = 2.0 / 51.0; // 2 * (1+X)^{-1}
        assert!((bound - exact).abs() < 1e-12);
        let x = radius_for_tail(&cert, 1.0, 1e-6).unwrap();
        assert!((decay_tail_bound(&cert, x) - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn rejects_delta_below_one() {
        let cert = DecayCertificate::new(1.5, 1.0, 1.0, 1.0).unwrap();
        assert!(radius_for_tail(&cert, 1.0, 1e-8).is_ok());
        // delta <= 1 is unrepresentable in a valid certificate, so exercise
        // the guard through the raw path.
        let bad = DecayCertificate::new(0.9, 1.0, 1.0, 1.0);
        assert!(bad.is_err());
    }
}
