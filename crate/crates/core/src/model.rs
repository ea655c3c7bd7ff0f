//! Domain types: periodic potentials, slowly varying perturbations with
//! decay certificates, compactly supported test functions, and symbol grids.
//!
//! The lattice is fixed to 2*pi*Z, so the dual lattice is Z and the reduced
//! Brillouin zone is E* = [-1/2, 1/2).

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Real 2*pi-periodic potential given by finitely many Fourier coefficients:
/// V(y) = sum_m vhat_m e^{i m y}, with vhat_{-m} = conj(vhat_m).
#[derive(Debug, Clone)]
pub struct PeriodicPotential {
    /// (mode, amplitude), sorted by mode, covering -M_V..=M_V.
    coeffs: Vec<(i32, Complex64)>,
}

impl PeriodicPotential {
    /// Build from (m, re, im) triples. Modes may be given for m >= 0 only;
    /// the conjugate partners are filled in. Conflicting explicit pairs are
    /// rejected.
    pub fn from_modes(modes: &[(i32, f64, f64)]) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for &(m, re, im) in modes {
            if map.insert(m, Complex64::new(re, im)).is_some() {
                return Err(Error::Validation(format!("duplicate potential mode {m}")));
            }
        }
        // fill conjugate partners, check consistency of explicit ones
        let keys: Vec<i32> = map.keys().copied().collect();
        for m in keys {
            let v = map[&m];
            match map.get(&-m) {
                Some(w) => {
                    if (w - v.conj()).norm() > 1e-12 {
                        return Err(Error::Validation(format!(
                            "potential not real: vhat_{} != conj(vhat_{})",
                            -m, m
                        )));
                    }
                }
                None => {
                    map.insert(-m, v.conj());
                }
            }
        }
        if let Some(v0) = map.get(&0) {
            if v0.im.abs() > 1e-12 {
                return Err(Error::Validation("vhat_0 must be real".into()));
            }
        }
        Ok(PeriodicPotential { coeffs: map.into_iter().collect() })
    }

    /// V = 0.
    pub fn free() -> Self {
        PeriodicPotential { coeffs: vec![] }
    }

    /// V(y) = 2 cos y, i.e. vhat_{+-1} = 1. The standing nontrivial example.
    pub fn two_cos() -> Self {
        Self::from_modes(&[(1, 1.0, 0.0)]).unwrap()
    }

    /// Largest |m| with a nonzero coefficient.
    pub fn bandwidth(&self) -> i32 {
        self.coeffs.iter().map(|(m, _)| m.abs()).max().unwrap_or(0)
    }

    pub fn fourier(&self, m: i32) -> Complex64 {
        self.coeffs
            .iter()
            .find(|(mm, _)| *mm == m)
            .map(|(_, v)| *v)
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn modes(&self) -> &[(i32, Complex64)] {
        &self.coeffs
    }

    pub fn eval(&self, y: f64) -> f64 {
        let mut v = Complex64::new(0.0, 0.0);
        for &(m, c) in &self.coeffs {
            v += c * Complex64::new(0.0, m as f64 * y).exp();
        }
        v.re
    }

    /// Max |Im V(y)| over a sample grid; realness diagnostic.
    pub fn max_imag_on_grid(&self, n: usize) -> f64 {
        (0..n).fold(0.0f64, |worst, i| {
            let y = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let mut v = Complex64::new(0.0, 0.0);
            for &(m, c) in &self.coeffs {
                v += c * Complex64::new(0.0, m as f64 * y).exp();
            }
            worst.max(v.im.abs())
        })
    }
}

/// Decay data for the perturbation: |d^a phi(x)| <= C_a (1+|x|)^{-delta-a},
/// recorded for a = 0, 1, 2. One dimension, so delta must exceed 1.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayCertificate {
    pub delta: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl DecayCertificate {
    pub fn new(delta: f64, c0: f64, c1: f64, c2: f64) -> Result<Self> {
        if delta <= 1.0 {
            return Err(Error::Validation(
                "delta must exceed dimension n=1".into(),
            ));
        }
        if c0 <= 0.0 || c1 <= 0.0 || c2 <= 0.0 {
            return Err(Error::Validation("decay constants must be positive".into()));
        }
        Ok(DecayCertificate { delta, c0, c1, c2 })
    }

    pub fn constant(&self, order: usize) -> f64 {
        match order {
            0 => self.c0,
            1 => self.c1,
            2 => self.c2,
            _ => panic!("certificate only covers orders 0..=2"),
        }
    }
}

/// Perturbation family with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationFamily {
    /// c (1 + x^2)^{-s/2}
    PowerLaw { c: f64, s: f64 },
    /// c e^{-x^2/sigma^2}
    Gaussian { c: f64, sigma: f64 },
    /// c exp(1 - 1/(1-(x/r)^2)) on |x| < r, 0 outside; phi(0) = c.
    Bump { c: f64, r: f64 },
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub family: PerturbationFamily,
    pub certificate: DecayCertificate,
}

impl Perturbation {
    pub fn new(family: PerturbationFamily, certificate: DecayCertificate) -> Result<Self> {
        match family {
            PerturbationFamily::PowerLaw { s, .. } if s <= 1.0 => {
                return Err(Error::Validation("power-law exponent s must exceed 1".into()))
            }
            PerturbationFamily::Gaussian { sigma, .. } if sigma <= 0.0 => {
                return Err(Error::Validation("gaussian width must be positive".into()))
            }
            PerturbationFamily::Bump { r, .. } if r <= 0.0 => {
                return Err(Error::Validation("bump radius must be positive".into()))
            }
            _ => {}
        }
        Ok(Perturbation { family, certificate })
    }

    /// Family with a certificate fitted on a grid: C_a = 1.05 * observed sup.
    pub fn with_fitted_certificate(family: PerturbationFamily, delta: f64) -> Result<Self> {
        let tmp = Perturbation {
            family,
            certificate: DecayCertificate::new(delta, 1.0, 1.0, 1.0)?,
        };
        let mut sup = [0.0f64; 3];
        let n = 4000;
        for i in 0..=n {
            let x = 200.0 * i as f64 / n as f64;
            for (a, s) in sup.iter_mut().enumerate() {
                let d = match a {
                    0 => tmp.phi(x),
                    1 => tmp.dphi(x),
                    _ => tmp.ddphi(x),
                };
                *s = s.max(d.abs() * (1.0 + x).powf(delta + a as f64));
            }
        }
        let cert = DecayCertificate::new(
            delta,
            (1.05 * sup[0]).max(1e-12),
            (1.05 * sup[1]).max(1e-12),
            (1.05 * sup[2]).max(1e-12),
        )?;
        Perturbation::new(family, cert)
    }

    pub fn zero() -> Self {
        // A zero perturbation, represented as a power law with c = 0.
        Perturbation {
            family: PerturbationFamily::PowerLaw { c: 0.0, s: 2.0 },
            certificate: DecayCertificate::new(2.0, 1e-12, 1e-12, 1e-12).unwrap(),
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        match self.family {
            PerturbationFamily::PowerLaw { c, s } => c * (1.0 + x * x).powf(-0.5 * s),
            PerturbationFamily::Gaussian { c, sigma } => c * (-x * x / (sigma * sigma)).exp(),
            PerturbationFamily::Bump { c, r } => {
                let t = x / r;
                if t.abs() < 1.0 {
                    c * (1.0 - 1.0 / (1.0 - t * t)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn dphi(&self, x: f64) -> f64 {
        match self.family {
            PerturbationFamily::PowerLaw { c, s } => {
                -c * s * x * (1.0 + x * x).powf(-0.5 * s - 1.0)
            }
            PerturbationFamily::Gaussian { c, sigma } => {
                let s2 = sigma * sigma;
                -2.0 * x / s2 * c * (-x * x / s2).exp()
            }
            PerturbationFamily::Bump { c, r } => {
                let t = x / r;
                if t.abs() < 1.0 {
                    let u = 1.0 - t * t;
                    c * (1.0 - 1.0 / u).exp() * (-2.0 * t / (u * u)) / r
                } else {
                    0.0
                }
            }
        }
    }

    pub fn ddphi(&self, x: f64) -> f64 {
        match self.family {
            PerturbationFamily::PowerLaw { c, s } => {
                let q = 1.0 + x * x;
                -c * s * q.powf(-0.5 * s - 2.0) * (1.0 - (s + 1.0) * x * x)
            }
            PerturbationFamily::Gaussian { c, sigma } => {
                let s2 = sigma * sigma;
                (4.0 * x * x / (s2 * s2) - 2.0 / s2) * c * (-x * x / s2).exp()
            }
            PerturbationFamily::Bump { c, r } => {
                let t = x / r;
                if t.abs() < 1.0 {
                    let u = 1.0 - t * t;
                    let g = (1.0 - 1.0 / u).exp();
                    let d1 = -2.0 * t / (u * u);
                    let d2 = -2.0 / (u * u) - 8.0 * t * t / (u * u * u);
                    c * g * (d1 * d1 + d2) / (r * r)
                } else {
                    0.0
                }
            }
        }
    }

    /// sup |phi| (attained at 0 for all three families).
    pub fn sup_abs(&self) -> f64 {
        self.phi(0.0).abs()
    }

    /// min(phi, 0) over the line: 0 for nonnegative families, phi(0) for
    /// negative amplitudes (families are monotone in |x|).
    pub fn min_value(&self) -> f64 {
        self.phi(0.0).min(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.sup_abs() == 0.0
    }

    /// Half-line integral of |phi| over [x0, inf), by quadrature on the
    /// decaying families (exact 0 beyond a bump's support).
    pub fn abs_tail_integral(&self, x0: f64) -> f64 {
        match self.family {
            PerturbationFamily::PowerLaw { c, s } if s == 2.0 => {
                c.abs() * (std::f64::consts::FRAC_PI_2 - x0.atan())
            }
            PerturbationFamily::Bump { r, .. } if x0 >= r => 0.0,
            _ => {
                // generic: adaptive quadrature out to the certificate radius
                let far = crate::quad::radius_for_tail(&self.certificate, 1.0, 1e-14)
                    .unwrap_or(x0 + 1.0)
                    .max(x0 + 1.0);
                crate::quad::integrate(&|x| self.phi(x).abs(), x0, far, 1e-12)
                    .map(|r| r.value)
                    .unwrap_or(0.0)
                    + 0.5 * crate::quad::decay_tail_bound(&self.certificate, far)
            }
        }
    }
}

/// Report from `check_decay`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub pass: bool,
    /// Achieved sup of |d^a phi|(1+|x|)^{delta+a} per derivative order.
    pub worst: [f64; 3],
}

/// Verify the decay certificate on a position grid (orders 0..=2).
pub fn check_decay(phi: &Perturbation, grid: &[f64]) -> Result<DecayReport> {
    if grid.is_empty() {
        return Err(Error::Validation("decay check grid is empty".into()));
    }
    let xmax = grid.iter().cloned().fold(f64::MIN, f64::max);
    if xmax < 100.0 {
        return Err(Error::Validation(
            "decay check grid must reach X_max >= 100".into(),
        ));
    }
    let cert = &phi.certificate;
    let mut worst = [0.0f64; 3];
    for &x in grid {
        let w = (1.0 + x.abs()).powf(cert.delta);
        let extra = 1.0 + x.abs();
        worst[0] = worst[0].max(phi.phi(x).abs() * w);
        worst[1] = worst[1].max(phi.dphi(x).abs() * w * extra);
        worst[2] = worst[2].max(phi.ddphi(x).abs() * w * extra * extra);
    }
    let pass = worst[0] <= cert.c0 && worst[1] <= cert.c1 && worst[2] <= cert.c2;
    Ok(DecayReport { pass, worst })
}

/// Compactly supported smooth bump test function
/// f(mu) = amplitude * exp(-1/(1-t^2)), t = (mu - center)/halfwidth.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TestFunction {
    pub center: f64,
    pub halfwidth: f64,
    pub amplitude: f64,
}

/// Integral of exp(-1/(1-t^2)) over (-1, 1); frozen reference value used to
/// normalize mollifiers. Double-checked by a quadrature test below.
pub const BUMP_MASS: f64 = 0.44399381616807944;

pub fn build_test_function(center: f64, halfwidth: f64, amplitude: f64) -> Result<TestFunction> {
    if halfwidth <= 0.0 {
        return Err(Error::Validation("degenerate support: halfwidth <= 0".into()));
    }
    Ok(TestFunction { center, halfwidth, amplitude })
}

impl TestFunction {
    pub fn support(&self) -> (f64, f64) {
        (self.center - self.halfwidth, self.center + self.halfwidth)
    }

    #[inline]
    fn t(&self, mu: f64) -> f64 {
        (mu - self.center) / self.halfwidth
    }

    pub fn eval(&self, mu: f64) -> f64 {
        let t = self.t(mu);
        if t.abs() < 1.0 {
            self.amplitude * (-1.0 / (1.0 - t * t)).exp()
        } else {
            0.0
        }
    }

    pub fn deriv(&self, mu: f64) -> f64 {
        let t = self.t(mu);
        if t.abs() < 1.0 {
            let u = 1.0 - t * t;
            self.amplitude * (-1.0 / u).exp() * (-2.0 * t / (u * u)) / self.halfwidth
        } else {
            0.0
        }
    }

    pub fn deriv2(&self, mu: f64) -> f64 {
        let t = self.t(mu);
        if t.abs() < 1.0 {
            let u = 1.0 - t * t;
            let g = (-1.0 / u).exp();
            let d1 = -2.0 * t / (u * u);
            let d2 = -2.0 / (u * u) - 8.0 * t * t / (u * u * u);
            self.amplitude * g * (d1 * d1 + d2) / (self.halfwidth * self.halfwidth)
        } else {
            0.0
        }
    }

    /// sup |f'|; the bump shape derivative peaks at |t| ~ 0.4472.
    pub fn sup_abs_deriv(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..=2000 {
            let t = -1.0 + 2.0 * i as f64 / 2000.0;
            worst = worst.max(self.deriv(self.center + t * self.halfwidth).abs());
        }
        worst
    }

    pub fn sup_abs_deriv2(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..=4000 {
            let t = -1.0 + 2.0 * i as f64 / 4000.0;
            worst = worst.max(self.deriv2(self.center + t * self.halfwidth).abs());
        }
        worst
    }

    /// Normalized mollifier of width eps centered at mu0:
    /// theta_eps(lambda) = eps^{-1} theta((lambda - mu0)/eps), integral 1.
    pub fn mollifier(mu0: f64, eps: f64) -> Result<TestFunction> {
        build_test_function(mu0, eps, 1.0 / (eps * BUMP_MASS))
    }
}

/// Sampled symbol on the dual torus cross a position window, with first
/// derivatives, for symbol-class certification and Weyl correction hooks.
#[derive(Debug, Clone)]
pub struct SymbolGrid {
    pub order: f64,
    /// uniform k-grid over [0, 1) (torus, period 1)
    pub k_grid: Vec<f64>,
    /// uniform r-grid over [-R, R]
    pub r_grid: Vec<f64>,
    /// values[ik][ir]
    pub values: Vec<Vec<f64>>,
    pub dk: Vec<Vec<f64>>,
    pub dr: Vec<Vec<f64>>,
}

impl SymbolGrid {
    pub fn from_fn<F, G, H>(order: f64, nk: usize, nr: usize, r_max: f64, f: F, fk: G, fr: H) -> Self
    where
        F: Fn(f64, f64) -> f64,
        G: Fn(f64, f64) -> f64,
        H: Fn(f64, f64) -> f64,
    {
        let k_grid: Vec<f64> = (0..nk).map(|i| i as f64 / nk as f64).collect();
        let r_grid: Vec<f64> = (0..nr)
            .map(|j| -r_max + 2.0 * r_max * j as f64 / (nr - 1) as f64)
            .collect();
        let sample = |h: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
            k_grid
                .iter()
                .map(|&k| r_grid.iter().map(|&r| h(k, r)).collect())
                .collect()
        };
        let values = sample(&f);
        let dk = sample(&fk);
        let dr = sample(&fr);
        SymbolGrid { order, k_grid, r_grid, values, dk, dr }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SymbolReport {
    pub pass: bool,
    /// Observed sup of |sym| <r>^m and of the first derivatives against
    /// their weights.
    pub constant: f64,
    pub seam_error: f64,
}

/// Check membership in the class S^m: |d^a sym| <r>^{m+|a|} bounded, |a| <= 1,
/// with the k-derivative weighted by <r>^m (k is compact).
pub fn check_symbol_class(sym: &SymbolGrid) -> Result<SymbolReport> {
    let nk = sym.k_grid.len();
    let nr = sym.r_grid.len();
    if nk < 4 || nr < 4 {
        return Err(Error::Validation("symbol grid too coarse".into()));
    }
    // torus seam: value at k=0 row must continue periodicly from the last row
    let mut seam = 0.0f64;
    let dk_step = sym.k_grid[1] - sym.k_grid[0];
    for j in 0..nr {
        let extrapolated = sym.values[nk - 1][j] + dk_step * sym.dk[nk - 1][j];
        seam = seam.max((extrapolated - sym.values[0][j]).abs());
    }
    let scale = sym
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    if seam > 0.05 * scale {
        return Err(Error::Validation("not a torus symbol: k seam mismatch".into()));
    }
    let mut constant = 0.0f64;
    for i in 0..nk {
        for j in 0..nr {
            let r = sym.r_grid[j];
            let w = (1.0 + r * r).sqrt();
            constant = constant.max(sym.values[i][j].abs() * w.powf(sym.order));
            constant = constant.max(sym.dk[i][j].abs() * w.powf(sym.order));
            constant = constant.max(sym.dr[i][j].abs() * w.powf(sym.order + 1.0));
        }
    }
    // Fail when the weighted samples grow toward the r boundary instead of
    // stabilizing: sup over |r| > R/2 must not exceed the sup over |r| <= R/2
    // by more than a stabilization factor. Checked for the values and the
    // r-derivative with their respective weights.
    let r_half = 0.5 * sym.r_grid.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
    let mut outer = [0.0f64; 2];
    let mut inner = [0.0f64; 2];
    for i in 0..nk {
        for j in 0..nr {
            let r = sym.r_grid[j];
            let w = (1.0 + r * r).sqrt();
            let v = sym.values[i][j].abs() * w.powf(sym.order);
            let d = sym.dr[i][j].abs() * w.powf(sym.order + 1.0);
            if r.abs() > r_half {
                outer[0] = outer[0].max(v);
                outer[1] = outer[1].max(d);
            } else {
                inner[0] = inner[0].max(v);
                inner[1] = inner[1].max(d);
            }
        }
    }
    let stable = |o: f64, i: f64| o <= i.max(1e-12) * 1.25;
    let pass = constant.is_finite() && stable(outer[0], inner[0]) && stable(outer[1], inner[1]);
    Ok(SymbolReport { pass, constant, seam_error: seam })
}
