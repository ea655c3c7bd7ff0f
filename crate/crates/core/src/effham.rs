//! Discrete h-Weyl quantization on the dual torus T* = R/Z (modes
//! e^{2pi i nu k}, so -hD_k has eigenvalues -2pi nu h) and the leading-order
//! effective Hamiltonian B = lambda(k) + phi(-hD_k) for the simple band 1,
//! compared against the reference Lambda = lambda(k) alone through trace
//! differences (individual truncated traces diverge with the mode cutoff J).

use crate::bloch::BandStructure;
use crate::error::{Error, Result};
use crate::linalg::{eigh_complex, eigh_real, ComplexMat, RealMat};
use crate::model::Perturbation;
use crate::model::TestFunction;
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::{PI, TAU};

/// Largest admissible pointwise perturbation value at the edge mode,
/// phi(-2pi J h) per certificate. The paper-scale requirement (truncation
/// negligible to 1e-8) is checked empirically by the J-stability property;
/// the pointwise certificate bound at that level would need J ~ 1e5 and a
/// dense solve far beyond the ceiling, so assembly enforces this looser gate
/// and records the actual edge bound.
const EDGE_PHI_MAX: f64 = 1e-4;

/// Effective band-1 Hamiltonian on dual modes nu in [-J, J].
#[derive(Debug)]
pub struct EffectiveOperator {
    pub h: f64,
    pub j: usize,
    /// band-1 Fourier coefficients lambda_hat_nu, nu = 0..=cutoff
    /// (lambda_hat_{-nu} = conj(lambda_hat_nu))
    pub lambda_hat: Vec<Complex64>,
    /// certificate bound on |phi(-2pi J h)| at the edge mode
    pub edge_phi: f64,
    /// band-1 range [min lambda_1, max lambda_1]
    pub band_range: (f64, f64),
    /// bottom of band 2 (infinity when only one band is tabulated)
    pub next_band_floor: f64,
    /// range of phi over R
    pub phi_range: (f64, f64),
    pub b: ComplexMat,
    pub lambda_mat: ComplexMat,
    phi_zero: bool,
}

/// Quantize the separable symbol u(k) + w(r): matrix
/// u_hat_{nu-nu'} + w(-2pi nu h) [nu = nu'] on modes nu in [-J, J].
/// `u_hat` holds coefficients for nu = 0..=K with u_hat_{-nu} = conj(u_hat_nu)
/// (real symbol u).
pub fn weyl_quantize_separable(
    u_hat: &[Complex64],
    w: &dyn Fn(f64) -> f64,
    h: f64,
    j: usize,
) -> Result<ComplexMat> {
    let dim = 2 * j + 1;
    let mut a = ComplexMat::zeros(dim);
    let coeff = |d: i64| -> Complex64 {
        let idx = d.unsigned_abs() as usize;
        if idx >= u_hat.len() {
            Complex64::new(0.0, 0.0)
        } else if d >= 0 {
            u_hat[idx]
        } else {
            u_hat[idx].conj()
        }
    };
    for col in 0..dim {
        for row in 0..dim {
            a.set(row, col, coeff(row as i64 - col as i64));
        }
        let nu = col as i64 - j as i64;
        let d = a.at(col, col) + w(-TAU * nu as f64 * h);
        a.set(col, col, d);
    }
    let herm = a.max_nonhermiticity();
    if herm > 1e-12 {
        return Err(Error::Guard(format!(
            "quantized real symbol not Hermitian: deviation {herm:.3e}"
        )));
    }
    Ok(a)
}

/// Quantize a general product symbol via its mixed representation
/// g_hat(d, r) = d-th k-Fourier coefficient of g(., r): the Weyl rule is
/// <nu|Op(g)|nu'> = g_hat_{nu-nu'}(-pi h (nu + nu')) (midpoint in r).
pub fn weyl_quantize_product(
    g_hat: &dyn Fn(i64, f64) -> Complex64,
    h: f64,
    j: usize,
) -> Result<ComplexMat> {
    let dim = 2 * j + 1;
    let mut a = ComplexMat::zeros(dim);
    for col in 0..dim {
        let nu2 = col as i64 - j as i64;
        for row in 0..dim {
            let nu1 = row as i64 - j as i64;
            a.set(row, col, g_hat(nu1 - nu2, -PI * h * (nu1 + nu2) as f64));
        }
    }
    let herm = a.max_nonhermiticity();
    if herm > 1e-12 {
        return Err(Error::Guard(format!(
            "quantized real symbol not Hermitian: deviation {herm:.3e}"
        )));
    }
    Ok(a)
}

/// Band-1 Fourier coefficients from the tabulated band by trapezoidal DFT
/// (spectrally exact on the uniform k-grid), with a decay check: the top
/// quarter of resolvable modes must be at rounding level, so that truncating
/// the returned list loses nothing.
fn band_fourier(bs: &BandStructure) -> Result<Vec<Complex64>> {
    let n = bs.n_k();
    let row = &bs.lambda[0];
    let kmax = n / 2;
    let mut hat = Vec::with_capacity(kmax + 1);
    for nu in 0..=kmax {
        let mut s = Complex64::new(0.0, 0.0);
        for (i, &v) in row.iter().enumerate() {
            let k = bs.k_grid[i];
            s += v * Complex64::new(0.0, -TAU * nu as f64 * k).exp();
        }
        hat.push(s / n as f64);
    }
    let scale = hat[0].norm().max(1.0);
    let worst_tail = hat[3 * kmax / 4..]
        .iter()
        .fold(0.0f64, |m, c| m.max(c.norm()));
    if worst_tail > 1e-12 * scale {
        return Err(Error::Guard(format!(
            "band Fourier coefficients not resolved: tail {worst_tail:.3e}"
        )));
    }
    // drop the rounding-level tail
    let mut cutoff = hat.len();
    while cutoff > 1 && hat[cutoff - 1].norm() < 1e-15 * scale {
        cutoff -= 1;
    }
    hat.truncate(cutoff);
    // lambda even in k (real V): rounding-level imaginary parts are dropped
    // so the quantized matrices come out exactly real
    if hat.iter().all(|c| c.im.abs() < 1e-12 * scale) {
        for c in &mut hat {
            c.im = 0.0;
        }
    }
    Ok(hat)
}

pub fn effective_operator(
    bs: &BandStructure,
    phi: &Perturbation,
    h: f64,
    j: usize,
) -> Result<EffectiveOperator> {
    if h <= 0.0 {
        return Err(Error::Validation("h must be positive".into()));
    }
    if j == 0 {
        return Err(Error::Validation("mode cutoff J must be positive".into()));
    }
    if bs.degenerate[0].iter().any(|&d| d) || !bs.gap[0].iter().all(|&g| g > 1e-8) {
        return Err(Error::Certification(
            "band 1 degenerate on E*: effective Hamiltonian requires a simple band".into(),
        ));
    }
    let lambda_hat = band_fourier(bs)?;
    let phi_zero = phi.is_zero();
    let c = &phi.certificate;
    let edge_phi = if phi_zero {
        0.0
    } else {
        c.c0 * (1.0 + TAU * j as f64 * h).powf(-c.delta)
    };
    if edge_phi > EDGE_PHI_MAX {
        return Err(Error::Validation(format!(
            "mode cutoff J={j} too small at h={h}: edge perturbation bound {edge_phi:.3e}"
        )));
    }
    let b = weyl_quantize_separable(&lambda_hat, &|r| phi.phi(r), h, j)?;
    let lambda_mat = weyl_quantize_separable(&lambda_hat, &|_| 0.0, h, j)?;
    let mut phi_lo = 0.0f64;
    let mut phi_hi = 0.0f64;
    for i in 0..=2000 {
        let r = -TAU * j as f64 * h * (i as f64 / 1000.0 - 1.0);
        let v = phi.phi(r);
        phi_lo = phi_lo.min(v);
        phi_hi = phi_hi.max(v);
    }
    Ok(EffectiveOperator {
        h,
        j,
        lambda_hat,
        edge_phi,
        band_range: (bs.band_min(0), bs.band_max(0)),
        next_band_floor: if bs.n_bands() > 1 { bs.band_min(1) } else { f64::INFINITY },
        phi_range: (phi_lo, phi_hi),
        b,
        lambda_mat,
        phi_zero,
    })
}

/// Hermitian spectrum, through the real-symmetric fast path when the matrix
/// is real (lambda even in k and phi real make both B and Lambda real).
fn hermitian_spectrum(a: &ComplexMat) -> Result<Vec<f64>> {
    if a.max_imag() == 0.0 {
        let mut m = RealMat::zeros(a.n);
        for col in 0..a.n {
            for row in 0..a.n {
                m.set(row, col, a.at(row, col).re);
            }
        }
        Ok(eigh_real(m, false)?.values)
    } else {
        Ok(eigh_complex(a.clone(), false)?.values)
    }
}

/// Sum f(spec B) - sum f(spec Lambda), term by term on the sorted spectra so
/// the phi = 0 case cancels exactly.
pub fn effective_trace_diff(eff: &EffectiveOperator, f: &TestFunction) -> Result<f64> {
    let (_, fhi) = f.support();
    // f may spill into the gaps around band 1 (no spectrum there), but must
    // not meet band 2 or its phi shifts
    if fhi >= eff.next_band_floor + eff.phi_range.0.min(0.0) {
        return Err(Error::Validation(
            "multi-band window not representable at leading order".into(),
        ));
    }
    if eff.phi_zero {
        return Ok(0.0);
    }
    let sb = hermitian_spectrum(&eff.b)?;
    let sl = hermitian_spectrum(&eff.lambda_mat)?;
    Ok(sb
        .iter()
        .zip(&sl)
        .map(|(&a, &b)| f.eval(a) - f.eval(b))
        .sum())
}

/// JSON record for one (h, J) comparison against the coefficient prediction
/// h^{-1} a0^(1)(f).
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveReport {
    pub h: f64,
    #[serde(rename = "J")]
    pub j: usize,
    pub trace_diff: f64,
    pub prediction: f64,
    pub rel_err: f64,
}

pub fn effective_report(eff: &EffectiveOperator, f: &TestFunction, a0_band1: f64) -> Result<EffectiveReport> {
    let trace_diff = effective_trace_diff(eff, f)?;
    let prediction = a0_band1 / eff.h;
    let rel_err = if prediction != 0.0 {
        (trace_diff - prediction).abs() / prediction.abs()
    } else {
        trace_diff.abs()
    };
    Ok(EffectiveReport { h: eff.h, j: eff.j, trace_diff, prediction, rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::compute_bands;
    use crate::exec::ExecMode;
    use crate::model::{build_test_function, PerturbationFamily, PeriodicPotential};

    fn two_cos_bands() -> BandStructure {
        compute_bands(&PeriodicPotential::two_cos(), 1024, 16, 2, ExecMode::Sequential).unwrap()
    }

    fn standard_phi() -> Perturbation {
        Perturbation::with_fitted_certificate(
            PerturbationFamily::PowerLaw { c: -0.2, s: 2.0 },
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_symbol_is_identity() {
        let one = [Complex64::new(1.0, 0.0)];
        let a = weyl_quantize_separable(&one, &|_| 0.0, 0.125, 4).unwrap();
        for i in 0..9 {
            for k in 0..9 {
                let want = if i == k { 1.0 } else { 0.0 };
                assert!((a.at(i, k) - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn symbol_r_is_hd() {
        // symbol r quantizes to -hD_k = diag(-2pi nu h)
        let zero = [Complex64::new(0.0, 0.0)];
        let h = 0.125;
        let a = weyl_quantize_separable(&zero, &|r| r, h, 4).unwrap();
        for col in 0..9 {
            let nu = col as i64 - 4;
            for row in 0..9 {
                let want = if row == col { -TAU * nu as f64 * h } else { 0.0 };
                assert!((a.at(row, col) - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn product_symbol_matches_symmetrized_product() {
        // lambda(k) * r: Weyl ordering of a symbol linear in r equals the
        // symmetrized product of the separate quantizations
        let bs = two_cos_bands();
        let hat = band_fourier(&bs).unwrap();
        let h = 0.125;
        let j = 8;
        let dim = 2 * j + 1;
        let g = |d: i64, r: f64| -> Complex64 {
            let idx = d.unsigned_abs() as usize;
            let c = if idx >= hat.len() {
                Complex64::new(0.0, 0.0)
            } else if d >= 0 {
                hat[idx]
            } else {
                hat[idx].conj()
            };
            c * r
        };
        let prod = weyl_quantize_product(&g, h, j).unwrap();
        let lam = weyl_quantize_separable(&hat, &|_| 0.0, h, j).unwrap();
        let r_op = weyl_quantize_separable(&[Complex64::new(0.0, 0.0)], &|r| r, h, j).unwrap();
        // 1/2 (Lam R + R Lam)
        for col in 0..dim {
            for row in 0..dim {
                let mut s = Complex64::new(0.0, 0.0);
                for m in 0..dim {
                    s += lam.at(row, m) * r_op.at(m, col) + r_op.at(row, m) * lam.at(m, col);
                }
                s *= 0.5;
                assert!(
                    (prod.at(row, col) - s).norm() < 1e-12,
                    "({row},{col}): {} vs {}",
                    prod.at(row, col),
                    s
                );
            }
        }
    }

    #[test]
    fn phi_quantization_is_diagonal_with_exact_spectrum() {
        let phi = standard_phi();
        let h = 0.125;
        let j = 16;
        let a = weyl_quantize_separable(&[Complex64::new(0.0, 0.0)], &|r| phi.phi(r), h, j)
            .unwrap();
        let mut expected: Vec<f64> = (-(j as i64)..=j as i64)
            .map(|nu| phi.phi(-TAU * nu as f64 * h))
            .collect();
        expected.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let spec = hermitian_spectrum(&a).unwrap();
        for (a, b) in spec.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn phi_zero_gives_b_equal_lambda_and_zero_trace() {
        let bs = two_cos_bands();
        let eff = effective_operator(&bs, &Perturbation::zero(), 0.125, 64).unwrap();
        for (x, y) in eff.b.data.iter().zip(&eff.lambda_mat.data) {
            assert_eq!(x, y);
        }
        let f = build_test_function(-1.06747, 0.002, 1.0).unwrap();
        assert_eq!(effective_trace_diff(&eff, &f).unwrap(), 0.0);
    }

    #[test]
    fn free_band_degeneracy_rejected() {
        let bs = compute_bands(&PeriodicPotential::free(), 256, 8, 2, ExecMode::Sequential)
            .unwrap();
        let err = effective_operator(&bs, &standard_phi(), 0.125, 64).unwrap_err();
        assert!(err.to_string().contains("simple band"));
    }

    #[test]
    fn toeplitz_spectrum_within_band_range() {
        let bs = two_cos_bands();
        let eff = effective_operator(&bs, &Perturbation::zero(), 0.125, 128).unwrap();
        let spec = hermitian_spectrum(&eff.lambda_mat).unwrap();
        let (lo, hi) = eff.band_range;
        let slack = 1e-10;
        for &v in &spec {
            assert!(v >= lo - slack && v <= hi + slack, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn j_stability() {
        let bs = two_cos_bands();
        // Gaussian decay: the mode tail beyond J is genuinely negligible, so
        // the Cauchy check can be tight. (A delta=2 power law leaves an
        // O(1/J) tail at any practical cutoff.)
        let phi = Perturbation::with_fitted_certificate(
            PerturbationFamily::Gaussian { c: -0.2, sigma: 4.0 },
            2.0,
        )
        .unwrap();
        let h = 0.125;
        // f centered at the band mean, inside band 1
        let f = build_test_function(-1.06747, 0.002, 1.0).unwrap();
        let t1 = effective_trace_diff(&effective_operator(&bs, &phi, h, 256).unwrap(), &f)
            .unwrap();
        let t2 = effective_trace_diff(&effective_operator(&bs, &phi, h, 512).unwrap(), &f)
            .unwrap();
        assert!((t1 - t2).abs() < 1e-8, "{t1} vs {t2}");
    }

    #[test]
    fn multi_band_window_rejected() {
        let bs = two_cos_bands();
        let eff = effective_operator(&bs, &standard_phi(), 0.125, 256).unwrap();
        let f = build_test_function(0.0, 0.5, 1.0).unwrap();
        let err = effective_trace_diff(&eff, &f).unwrap_err();
        assert!(err
            .to_string()
            .contains("multi-band window not representable at leading order"));
    }

    #[test]
    fn small_j_rejected() {
        let bs = two_cos_bands();
        let err = effective_operator(&bs, &standard_phi(), 0.01, 8).unwrap_err();
        assert!(err.to_string().contains("edge perturbation bound"));
    }

    #[test]
    fn report_fields() {
        let bs = two_cos_bands();
        let eff = effective_operator(&bs, &standard_phi(), 0.125, 256).unwrap();
        let f = build_test_function(-1.06747, 0.002, 1.0).unwrap();
        let r = effective_report(&eff, &f, -1e-4).unwrap();
        assert_eq!(r.h, 0.125);
        assert_eq!(r.j, 256);
        assert!((r.prediction - (-8e-4)).abs() < 1e-12);
        let js = serde_json::to_string(&r).unwrap();
        assert!(js.contains("\"J\":256") && js.contains("trace_diff"));
    }
}
