//! Integrated density of states rho(mu) = (2pi)^{-1} sum_p |{k in E*:
//! lambda_p(k) <= mu}| and its density rho'(mu) via Fermi roots. Roots are
//! located on the cubic band interpolant (the tabulated values are exact at
//! the nodes), which keeps single evaluations cheap enough for the nested
//! quadratures downstream.

use crate::bloch::BandStructure;
use crate::error::{Error, Result};
use serde::Serialize;
use std::f64::consts::PI;

/// Criticality threshold for |lambda'| at a Fermi root.
const SLOPE_TOL: f64 = 1e-8;

/// Roots of lambda_p(k) = mu on the interpolant, with interpolant slopes.
/// Also detects tangent roots at grid nodes (band extrema that exactly touch
/// mu produce no sign change; the fold points k = 0, +-1/2 are grid nodes).
fn band_roots(bs: &BandStructure, p: usize, mu: f64) -> Vec<(f64, f64)> {
    let n = bs.n_k();
    let dk = 1.0 / n as f64;
    let row = &bs.lambda[p];
    let g = |i: usize| row[i % n] - mu;
    let mut roots: Vec<(f64, f64)> = Vec::new();
    let slope_at = |k: f64| bs.eval_band_deriv(p, k);
    // At a grid node use the central difference of table values: at a
    // symmetric kink (fold point) it cancels to ~0, which is what triggers
    // the kink/edge classification downstream; the cubic derivative does not.
    let slope_node = |i: usize| (row[(i + 1) % n] - row[(i + n - 1) % n]) / (2.0 * dk);
    for i in 0..n {
        let (a, b) = (g(i), g(i + 1));
        if a == 0.0 {
            roots.push((bs.k_grid[i], slope_node(i)));
        } else if a * b < 0.0 {
            let (mut lo, mut hi) = (bs.k_grid[i], bs.k_grid[i] + dk);
            let flo_pos = a > 0.0;
            for _ in 0..52 {
                let mid = 0.5 * (lo + hi);
                let fm = bs.eval_band(p, mid) - mu;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm > 0.0) == flo_pos {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let k = 0.5 * (lo + hi);
            roots.push((k, slope_at(k)));
        } else if g(i).abs() < 1e-9 && roots.iter().all(|r| (r.0 - bs.k_grid[i]).abs() > dk / 2.0)
        {
            roots.push((bs.k_grid[i], slope_node(i)));
        }
    }
    // collapse duplicates within tolerance (tangent pairs)
    roots.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    roots.dedup_by(|a, b| {
        let d = (a.0 - b.0).rem_euclid(1.0);
        d < 1e-9 || d > 1.0 - 1e-9
    });
    roots
}

/// measure{k in E*: lambda_p(k) <= mu} for one band, exact between roots.
fn band_sublevel_measure(bs: &BandStructure, p: usize, mu: f64, roots: &[(f64, f64)]) -> f64 {
    if roots.is_empty() {
        return if bs.band_max(p) <= mu { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    let m = roots.len();
    for i in 0..m {
        let a = roots[i].0;
        let b = if i + 1 < m { roots[i + 1].0 } else { roots[0].0 + 1.0 };
        let mid = 0.5 * (a + b);
        if bs.eval_band(p, mid) <= mu {
            total += b - a;
        }
    }
    total
}

/// Integrated density of states rho(mu).
pub fn integrated_dos(bs: &BandStructure, mu: f64) -> Result<f64> {
    if mu > bs.reliable_ceiling() {
        return Err(Error::Validation("insufficient bands tabulated".into()));
    }
    let mut total = 0.0;
    for p in 0..bs.n_bands() {
        if mu >= bs.band_max(p) {
            total += 1.0;
        } else if mu > bs.band_min(p) {
            let roots = band_roots(bs, p, mu);
            total += band_sublevel_measure(bs, p, mu, &roots);
        }
    }
    Ok(total / (2.0 * PI))
}

/// DOS density rho'(mu) = (2pi)^{-1} sum over Fermi roots of 1/|lambda'|.
/// A tangent root at a fold point (kink: one-sided slopes of opposite sign
/// and comparable size) stands for two coalesced symmetric roots and
/// contributes (1/2)(1/|s-| + 1/|s+|); a genuine band-edge root (both sides
/// flat) is a van Hove singularity and is rejected.
pub fn dos_density(bs: &BandStructure, mu: f64) -> Result<f64> {
    if mu > bs.reliable_ceiling() {
        return Err(Error::Validation("insufficient bands tabulated".into()));
    }
    let n = bs.n_k();
    let dk = 1.0 / n as f64;
    let mut total = 0.0;
    for p in 0..bs.n_bands() {
        if mu < bs.band_min(p) - 1e-12 || mu > bs.band_max(p) + 1e-12 {
            continue;
        }
        for (k, slope) in band_roots(bs, p, mu) {
            if slope.abs() > SLOPE_TOL {
                total += 1.0 / slope.abs();
                continue;
            }
            // Distinguish a kink (band crossing at a fold point; one-sided
            // slopes O(1), independent of stencil width) from a smooth band
            // edge (slope ~ lambda'' * distance, doubles with the stencil).
            let ti = ((k + 0.5) / dk).round() as i64;
            let at = |i: i64| bs.lambda[p][i.rem_euclid(n as i64) as usize];
            let s1l = (at(ti) - at(ti - 1)) / dk;
            let s2l = (at(ti) - at(ti - 2)) / (2.0 * dk);
            let s1r = (at(ti + 1) - at(ti)) / dk;
            let s2r = (at(ti + 2) - at(ti)) / (2.0 * dk);
            let kink = s1l.abs() > SLOPE_TOL
                && s1r.abs() > SLOPE_TOL
                && s2l.abs() < 1.5 * s1l.abs()
                && s2r.abs() < 1.5 * s1r.abs();
            if kink {
                // Richardson-extrapolated one-sided slopes; the coalesced
                // pair of symmetric roots contributes half of each branch.
                let sl = 2.0 * s1l - s2l;
                let sr = 2.0 * s1r - s2r;
                total += 0.5 * (1.0 / sl.abs() + 1.0 / sr.abs());
            } else {
                return Err(Error::Guard(format!(
                    "DOS singular at band edge (band {}, mu={mu})",
                    p + 1
                )));
            }
        }
    }
    Ok(total / (2.0 * PI))
}

/// Number of Fermi roots over all tabulated bands (diagnostic column).
pub fn fermi_point_count(bs: &BandStructure, mu: f64) -> usize {
    (0..bs.n_bands())
        .map(|p| {
            if mu < bs.band_min(p) - 1e-12 || mu > bs.band_max(p) + 1e-12 {
                0
            } else {
                band_roots(bs, p, mu).len()
            }
        })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct DosTable {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    /// NaN where mu is critical (band edge).
    pub drho: Vec<f64>,
    pub n_fermi_points: Vec<usize>,
}

pub fn build_dos_table(bs: &BandStructure, mu_grid: &[f64]) -> Result<DosTable> {
    let mut t = DosTable {
        mu: mu_grid.to_vec(),
        rho: Vec::with_capacity(mu_grid.len()),
        drho: Vec::with_capacity(mu_grid.len()),
        n_fermi_points: Vec::with_capacity(mu_grid.len()),
    };
    for &mu in mu_grid {
        t.rho.push(integrated_dos(bs, mu)?);
        t.drho.push(dos_density(bs, mu).unwrap_or(f64::NAN));
        t.n_fermi_points.push(fermi_point_count(bs, mu));
    }
    Ok(t)
}

impl DosTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mu,rho,drho,n_fermi_points\n");
        for i in 0..self.mu.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.mu[i], self.rho[i], self.drho[i], self.n_fermi_points[i]
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::compute_bands;
    use crate::exec::ExecMode;
    use crate::model::PeriodicPotential;

    fn free_bands() -> BandStructure {
        compute_bands(&PeriodicPotential::free(), 2048, 8, 8, ExecMode::Sequential).unwrap()
    }

    fn two_cos_bands() -> BandStructure {
        compute_bands(&PeriodicPotential::two_cos(), 512, 16, 8, ExecMode::Sequential).unwrap()
    }

    #[test]
    fn free_ids_closed_form_points() {
        let bs = free_bands();
        assert!((integrated_dos(&bs, 1.0).unwrap() - 1.0 / PI).abs() < 1e-9);
        assert!((integrated_dos(&bs, 0.25).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-9);
    }

    #[test]
    fn free_ids_law_sup() {
        let bs = free_bands();
        let mut worst = 0.0f64;
        for i in 0..=390 {
            let mu = 0.1 + 3.9 * i as f64 / 390.0;
            let rho = integrated_dos(&bs, mu).unwrap();
            worst = worst.max((rho - mu.sqrt() / PI).abs());
        }
        assert!(worst < 1e-6, "worst {worst}");
    }

    #[test]
    fn free_density_closed_form() {
        let bs = free_bands();
        assert!((dos_density(&bs, 1.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-6);
        assert!((dos_density(&bs, 4.0).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-6);
    }

    #[test]
    fn two_cos_full_band_measure() {
        let bs = two_cos_bands();
        let top = bs.band_max(0);
        // just above the band top, inside the gap: one full band
        let rho = integrated_dos(&bs, top + 1e-9).unwrap();
        assert!((rho - 1.0 / (2.0 * PI)).abs() < 1e-9);
    }

    #[test]
    fn two_cos_density_matches_ids_difference() {
        let bs = two_cos_bands();
        let mu = 0.5 * (bs.band_min(0) + bs.band_max(0));
        let d = dos_density(&bs, mu).unwrap();
        let e = 1e-5 * (bs.band_max(0) - bs.band_min(0));
        let fd = (integrated_dos(&bs, mu + e).unwrap() - integrated_dos(&bs, mu - e).unwrap())
            / (2.0 * e);
        assert!((d - fd).abs() < 1e-6 * d.abs().max(1.0), "d {d} fd {fd}");
    }

    #[test]
    fn density_consistency_two_step_sizes() {
        let bs = two_cos_bands();
        let mu = bs.band_min(0) + 0.3 * (bs.band_max(0) - bs.band_min(0));
        let d = dos_density(&bs, mu).unwrap();
        for e in [1e-5, 5e-6] {
            let fd = (integrated_dos(&bs, mu + e).unwrap()
                - integrated_dos(&bs, mu - e).unwrap())
                / (2.0 * e);
            // C * e^2 with generous C: the band is narrow, rho'' is large
            assert!((d - fd).abs() < 1e8 * e * e + 1e-9, "e {e}: {} vs {}", d, fd);
        }
    }

    #[test]
    fn monotone_in_mu() {
        let bs = two_cos_bands();
        let mut prev = -1.0;
        for i in 0..200 {
            let mu = -1.2 + 2.0 * i as f64 / 199.0;
            let rho = integrated_dos(&bs, mu).unwrap();
            assert!(rho >= prev - 1e-12);
            prev = rho;
        }
    }

    #[test]
    fn flat_in_gap() {
        let bs = two_cos_bands();
        let a = integrated_dos(&bs, bs.band_max(0) + 0.1).unwrap();
        let b = integrated_dos(&bs, bs.band_min(1) - 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ceiling_guard() {
        let bs = two_cos_bands();
        let err = integrated_dos(&bs, bs.reliable_ceiling() + 1.0).unwrap_err();
        assert!(err.to_string().contains("insufficient bands tabulated"));
    }

    #[test]
    fn band_edge_rejected_as_singular() {
        let bs = two_cos_bands();
        // band-1 bottom: smooth extremum, van Hove singularity
        let mu = bs.band_min(0);
        assert!(dos_density(&bs, mu).is_err());
    }

    #[test]
    fn dos_table_csv() {
        let bs = two_cos_bands();
        let mid = 0.5 * (bs.band_min(0) + bs.band_max(0));
        let t = build_dos_table(&bs, &[mid - 0.001, mid, mid + 0.001]).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("mu,rho,drho,n_fermi_points\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(t.n_fermi_points.iter().all(|&c| c == 2));
    }
}
