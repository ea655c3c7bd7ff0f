//! Independent reference computations used to cross-check the library:
//! a shooting/discriminant ODE solver for the Mathieu Bloch problem, a
//! tensor-grid Riemann evaluation of the free-case leading coefficient, and
//! a second-order finite-difference discretization with Richardson
//! extrapolation. None of these share code paths with the library's
//! plane-wave / spectral-collocation machinery.

// each test binary uses its own subset of these oracles
#![allow(dead_code)]

use ssf_lab::linalg::{eigh_real, RealMat};
use ssf_lab::model::{Perturbation, PeriodicPotential, TestFunction};
use std::f64::consts::PI;

/// Floquet discriminant D(lambda) = tr M(lambda) of -u'' + V u = lambda u
/// over one period [0, 2pi], computed by RK4 on the fundamental system.
pub fn discriminant(v: &PeriodicPotential, lambda: f64, steps: usize) -> f64 {
    // state (u1, p1, u2, p2), p = u'
    let f = |y: f64, s: [f64; 4]| -> [f64; 4] {
        let q = v.eval(y) - lambda;
        [s[1], q * s[0], s[3], q * s[2]]
    };
    let mut s = [1.0, 0.0, 0.0, 1.0];
    let dy = 2.0 * PI / steps as f64;
    let mut y = 0.0;
    for _ in 0..steps {
        let k1 = f(y, s);
        let add = |a: [f64; 4], b: [f64; 4], c: f64| {
            [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2], a[3] + c * b[3]]
        };
        let k2 = f(y + 0.5 * dy, add(s, k1, 0.5 * dy));
        let k3 = f(y + 0.5 * dy, add(s, k2, 0.5 * dy));
        let k4 = f(y + dy, add(s, k3, dy));
        for i in 0..4 {
            s[i] += dy / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        y += dy;
    }
    // M = [[u1(2pi), u2(2pi)], [p1(2pi), p2(2pi)]], D = tr M
    s[0] + s[3]
}

/// Lowest Bloch eigenvalue at quasimomentum k by bisection on
/// D(lambda) - 2 cos(2 pi k): below the spectrum D > 2 >= 2 cos(2 pi k),
/// and the first band-1 crossing is simple.
pub fn shooting_band1_eigenvalue(v: &PeriodicPotential, k: f64, steps: usize) -> f64 {
    let target = 2.0 * (2.0 * PI * k).cos();
    let g = |lam: f64| discriminant(v, lam, steps) - target;
    let mut lo = -4.0;
    assert!(g(lo) > 0.0, "bisection start not below the spectrum");
    let mut hi = lo;
    loop {
        hi += 0.05;
        assert!(hi < 6.0, "no band-1 crossing found");
        if g(hi) < 0.0 {
            break;
        }
        lo = hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Free-case leading coefficient by brute tensor-grid midpoint quadrature of
/// (2 pi)^{-1} * integral over (x, xi) of f(xi^2 + phi(x)) - f(xi^2). Only
/// valid for rapidly decaying phi (the x-range is truncated at `x_max`).
pub fn free_a0_tensor_oracle(
    phi: &Perturbation,
    f: &TestFunction,
    x_max: f64,
    nx: usize,
    nxi: usize,
) -> f64 {
    let (flo, fhi) = f.support();
    let pad = phi.sup_abs() * 1.05 + 1e-6;
    let xi_lo = (flo - pad).max(0.0).sqrt();
    let xi_hi = (fhi + pad).max(0.0).sqrt();
    let dxi = (xi_hi - xi_lo) / nxi as f64;
    let dx = 2.0 * x_max / nx as f64;
    let mut total = 0.0;
    for i in 0..nx {
        let x = -x_max + (i as f64 + 0.5) * dx;
        let s = phi.phi(x);
        if s == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for j in 0..nxi {
            let xi = xi_lo + (j as f64 + 0.5) * dxi;
            inner += f.eval(xi * xi + s) - f.eval(xi * xi);
        }
        // both signs of xi
        total += 2.0 * inner * dxi * dx;
    }
    total / (2.0 * PI)
}

/// tr[f(P(h)) - f(P0)] on the periodic box [-L, L), L = pi * cells, using
/// the standard 3-point finite-difference Laplacian at `pts` points per cell,
/// Richardson-extrapolated over a doubled grid to cancel the O(dx^2) error.
pub fn fd_trace_diff_oracle(
    v: &PeriodicPotential,
    phi: &Perturbation,
    f: &TestFunction,
    h: f64,
    cells: usize,
    pts: usize,
) -> f64 {
    let t1 = fd_trace_diff(v, phi, f, h, cells, pts);
    let t2 = fd_trace_diff(v, phi, f, h, cells, 2 * pts);
    (4.0 * t2 - t1) / 3.0
}

fn fd_trace_diff(
    v: &PeriodicPotential,
    phi: &Perturbation,
    f: &TestFunction,
    h: f64,
    cells: usize,
    pts: usize,
) -> f64 {
    let spec_h = fd_spectrum(v, Some((phi, h)), cells, pts);
    let spec_0 = fd_spectrum(v, None, cells, pts);
    spec_h
        .iter()
        .zip(&spec_0)
        .map(|(&a, &b)| f.eval(a) - f.eval(b))
        .sum()
}

fn fd_spectrum(
    v: &PeriodicPotential,
    phi: Option<(&Perturbation, f64)>,
    cells: usize,
    pts: usize,
) -> Vec<f64> {
    let n = cells * pts;
    let l = PI * cells as f64;
    let dx = 2.0 * l / n as f64;
    let inv = 1.0 / (dx * dx);
    let mut m = RealMat::zeros(n);
    for i in 0..n {
        let x = -l + i as f64 * dx;
        let mut d = 2.0 * inv + v.eval(x);
        if let Some((p, h)) = phi {
            d += p.phi(h * x);
        }
        m.set(i, i, d);
        let j = (i + 1) % n;
        m.set(i, j, -inv);
        m.set(j, i, -inv);
    }
    eigh_real(m, false).expect("fd eigensolve").values
}
