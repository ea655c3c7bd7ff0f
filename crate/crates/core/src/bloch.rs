//! Bloch eigenvalue problem P(k) = (D_y + k)^2 + V(y) on the periodicity
//! torus, solved by plane-wave truncation: modes e^{ijy}, j in [-M, M],
//! matrix entries (j+k)^2 delta_{jj'} + vhat_{j-j'}. Band functions
//! lambda_p(k) are tabulated over E* = [-1/2, 1/2) together with their
//! first two k-derivatives and adjacent band gaps.

use crate::error::{Error, Result};
use crate::exec::{map_range, ExecMode};
use crate::linalg::{eigh_complex, eigh_real, ComplexMat, RealMat};
use crate::model::PeriodicPotential;
use num_complex::Complex64;
use serde::Serialize;

/// Gap threshold below which a band entry is treated as degenerate and its
/// Hellmann-Feynman derivative is flagged rather than fabricated.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Assembled plane-wave matrix of P(k) at one quasimomentum.
#[derive(Debug, Clone)]
pub struct BlochMatrix {
    pub k: f64,
    pub truncation: usize,
    pub matrix: ComplexMat,
}

pub fn assemble_bloch_matrix(v: &PeriodicPotential, k: f64, m: usize) -> Result<BlochMatrix> {
    if (m as i32) < v.bandwidth() {
        return Err(Error::Validation(
            "truncation below potential bandwidth".into(),
        ));
    }
    if !(-0.5..0.5).contains(&k) {
        return Err(Error::Validation(format!(
            "quasimomentum {k} outside E* = [-1/2, 1/2)"
        )));
    }
    let n = 2 * m + 1;
    let mut a = ComplexMat::zeros(n);
    for row in 0..n {
        let j = row as i32 - m as i32;
        for col in 0..n {
            let jp = col as i32 - m as i32;
            let mut e = v.fourier(j - jp);
            if row == col {
                let d = j as f64 + k;
                e += Complex64::new(d * d, 0.0);
            }
            a.set(row, col, e);
        }
    }
    debug_assert!(a.max_nonhermiticity() < 1e-14);
    Ok(BlochMatrix { k, truncation: m, matrix: a })
}

/// One k-point eigensolve; returns eigenvalues ascending and, on request,
/// Hellmann-Feynman slopes lambda'_p(k) = sum_j 2(j+k)|c_j|^2 per band.
pub fn solve_bloch(
    v: &PeriodicPotential,
    k: f64,
    m: usize,
    p_max: usize,
    want_slopes: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let bm = assemble_bloch_matrix(v, k, m)?;
    let n = 2 * m + 1;
    // Real potentials with real Fourier data give a real symmetric matrix;
    // the real path is several times faster and exactly preserves symmetry.
    let real_path = v.modes().iter().all(|&(_, c)| c.im == 0.0);
    let (values, slopes) = if real_path {
        let mut a = RealMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, bm.matrix.at(i, j).re);
            }
        }
        let eig = eigh_real(a, want_slopes)
            .map_err(|e| Error::Guard(format!("band solve failed at k={k}: {e}")))?;
        let slopes = eig.vectors.as_ref().map(|u| {
            (0..p_max.min(n))
                .map(|p| {
                    let col = &u[p * n..(p + 1) * n];
                    col.iter()
                        .enumerate()
                        .map(|(row, c)| {
                            let j = row as f64 - m as f64;
                            2.0 * (j + k) * c * c
                        })
                        .sum()
                })
                .collect::<Vec<f64>>()
        });
        (eig.values, slopes)
    } else {
        let eig = eigh_complex(bm.matrix, want_slopes)
            .map_err(|e| Error::Guard(format!("band solve failed at k={k}: {e}")))?;
        let slopes = eig.vectors.as_ref().map(|u| {
            (0..p_max.min(n))
                .map(|p| {
                    let col = &u[p * n..(p + 1) * n];
                    col.iter()
                        .enumerate()
                        .map(|(row, c)| {
                            let j = row as f64 - m as f64;
                            2.0 * (j + k) * c.norm_sqr()
                        })
                        .sum()
                })
                .collect::<Vec<f64>>()
        });
        (eig.values, slopes)
    };
    Ok((values, slopes))
}

/// Tabulated band structure over a uniform k-grid on E*.
#[derive(Debug, Clone)]
pub struct BandStructure {
    pub potential: PeriodicPotential,
    pub truncation: usize,
    /// k_i = -1/2 + i/N_k, i = 0..N_k.
    pub k_grid: Vec<f64>,
    /// lambda[p][i], bands p = 0..P_max (0-based storage, 1-based naming).
    pub lambda: Vec<Vec<f64>>,
    /// Hellmann-Feynman slopes; NaN where the band is degenerate.
    pub dlambda: Vec<Vec<f64>>,
    /// 4th-order central differences on the periodic k-grid.
    pub d2lambda: Vec<Vec<f64>>,
    /// Min distance to the adjacent bands at each (p, i).
    pub gap: Vec<Vec<f64>>,
    pub degenerate: Vec<Vec<bool>>,
    /// Max |lambda_p(k)| change when re-solved at truncation M+8.
    pub cauchy_change: f64,
    /// Max |HF slope - centered FD of the lambda table| over simple entries.
    pub derivative_consistency: f64,
}

pub fn compute_bands(
    v: &PeriodicPotential,
    n_k: usize,
    m: usize,
    p_max: usize,
    mode: ExecMode,
) -> Result<BandStructure> {
    if p_max > 2 * m + 1 {
        return Err(Error::Validation("P_max exceeds 2M+1 plane waves".into()));
    }
    if n_k < 16 {
        return Err(Error::Validation("k-grid too coarse (need >= 16)".into()));
    }
    let k_grid: Vec<f64> = (0..n_k).map(|i| -0.5 + i as f64 / n_k as f64).collect();
    let solves: Vec<Result<(Vec<f64>, Option<Vec<f64>>)>> =
        map_range(mode, n_k, |i| solve_bloch(v, k_grid[i], m, p_max, true));
    let mut lambda = vec![vec![0.0; n_k]; p_max];
    let mut dlambda = vec![vec![0.0; n_k]; p_max];
    let mut gap = vec![vec![0.0; n_k]; p_max];
    let mut degenerate = vec![vec![false; n_k]; p_max];
    for (i, res) in solves.into_iter().enumerate() {
        let (vals, slopes) = res?;
        let slopes = slopes.expect("slopes requested");
        for p in 0..p_max {
            lambda[p][i] = vals[p];
            let below = if p > 0 { vals[p] - vals[p - 1] } else { f64::INFINITY };
            let above = if p + 1 < vals.len() { vals[p + 1] - vals[p] } else { f64::INFINITY };
            gap[p][i] = below.min(above);
            if gap[p][i] < DEGENERACY_TOL {
                degenerate[p][i] = true;
                dlambda[p][i] = f64::NAN;
            } else {
                dlambda[p][i] = slopes[p];
            }
        }
    }
    // 4th-order periodic central differences for lambda''.
    let dk = 1.0 / n_k as f64;
    let mut d2lambda = vec![vec![0.0; n_k]; p_max];
    for p in 0..p_max {
        for i in 0..n_k {
            let l = |off: i32| lambda[p][((i as i32 + off).rem_euclid(n_k as i32)) as usize];
            d2lambda[p][i] =
                (-l(-2) + 16.0 * l(-1) - 30.0 * l(0) + 16.0 * l(1) - l(2)) / (12.0 * dk * dk);
        }
    }
    // Truncation Cauchy check at a small k-sample.
    let mut cauchy = 0.0f64;
    for &i in &[0, n_k / 5, n_k / 2, (4 * n_k) / 5] {
        let (vals, _) = solve_bloch(v, k_grid[i], m + 8, p_max, false)?;
        for p in 0..p_max {
            cauchy = cauchy.max((vals[p] - lambda[p][i]).abs());
        }
    }
    // Cross-check HF slopes against centered differences of the table.
    let mut consistency = 0.0f64;
    for p in 0..p_max {
        for i in 0..n_k {
            if degenerate[p][i] {
                continue;
            }
            let im = (i + n_k - 1) % n_k;
            let ip = (i + 1) % n_k;
            if degenerate[p][im] || degenerate[p][ip] {
                continue;
            }
            let fd = (lambda[p][ip] - lambda[p][im]) / (2.0 * dk);
            // second-order FD error ~ lambda''' dk^2 / 6; compare loosely
            consistency = consistency.max((dlambda[p][i] - fd).abs());
        }
    }
    Ok(BandStructure {
        potential: v.clone(),
        truncation: m,
        k_grid,
        lambda,
        dlambda,
        d2lambda,
        gap,
        degenerate,
        cauchy_change: cauchy,
        derivative_consistency: consistency,
    })
}

impl BandStructure {
    pub fn n_k(&self) -> usize {
        self.k_grid.len()
    }

    pub fn n_bands(&self) -> usize {
        self.lambda.len()
    }

    pub fn band_min(&self, p: usize) -> f64 {
        self.lambda[p].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn band_max(&self, p: usize) -> f64 {
        self.lambda[p].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Ceiling below which the tabulation is complete: the top band's min.
    pub fn reliable_ceiling(&self) -> f64 {
        self.band_min(self.n_bands() - 1)
    }

    /// Stencil base index for the cell [i1, i1+1]: nodes b..b+3. The default
    /// centered stencil is shifted to one side when it would straddle a
    /// degenerate node (a band crossing is a kink of the sorted labeling;
    /// each side of it is smooth, but a cubic through the kink is not).
    fn stencil_base(&self, p: usize, i1: i64) -> i64 {
        let n = self.n_k() as i64;
        let deg = |i: i64| self.degenerate[p][i.rem_euclid(n) as usize];
        if deg(i1) {
            i1 // kink at the left endpoint: stay on its right side
        } else if deg(i1 + 1) {
            i1 - 2 // kink at the right endpoint: stay on its left side
        } else if deg(i1 - 1) {
            i1
        } else if deg(i1 + 2) {
            i1 - 2
        } else {
            i1 - 1
        }
    }

    /// Lagrange cubic on nodes 0,1,2,3: (value, d/du) at u.
    fn cubic(y: [f64; 4], u: f64) -> (f64, f64) {
        let l0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0;
        let l1 = u * (u - 2.0) * (u - 3.0) / 2.0;
        let l2 = -u * (u - 1.0) * (u - 3.0) / 2.0;
        let l3 = u * (u - 1.0) * (u - 2.0) / 6.0;
        let d0 = -((u - 2.0) * (u - 3.0) + (u - 1.0) * (u - 3.0) + (u - 1.0) * (u - 2.0)) / 6.0;
        let d1 = ((u - 2.0) * (u - 3.0) + u * (u - 3.0) + u * (u - 2.0)) / 2.0;
        let d2 = -((u - 1.0) * (u - 3.0) + u * (u - 3.0) + u * (u - 1.0)) / 2.0;
        let d3 = ((u - 1.0) * (u - 2.0) + u * (u - 1.0) + u * (u - 2.0)) / 6.0;
        (
            l0 * y[0] + l1 * y[1] + l2 * y[2] + l3 * y[3],
            d0 * y[0] + d1 * y[1] + d2 * y[2] + d3 * y[3],
        )
    }

    fn interp(&self, p: usize, k: f64) -> (f64, f64) {
        let n = self.n_k() as f64;
        let t = (k + 0.5).rem_euclid(1.0) * n; // grid coordinate
        let i1 = t.floor() as i64;
        let b = self.stencil_base(p, i1);
        let row = &self.lambda[p];
        let at = |i: i64| row[i.rem_euclid(self.n_k() as i64) as usize];
        let y = [at(b), at(b + 1), at(b + 2), at(b + 3)];
        let (v, dv) = Self::cubic(y, t - b as f64);
        (v, dv * n)
    }

    /// Periodic cubic (4-point Lagrange) interpolation of lambda_p.
    pub fn eval_band(&self, p: usize, k: f64) -> f64 {
        self.interp(p, k).0
    }

    /// Analytic k-derivative of the cubic interpolant (no finite-difference
    /// cancellation noise; error O(dk^3) on smooth bands).
    pub fn eval_band_deriv(&self, p: usize, k: f64) -> f64 {
        self.interp(p, k).1
    }

    /// Exact eigensolve at one k (fresh matrix, not interpolated).
    pub fn eval_band_exact(&self, p: usize, k: f64) -> Result<f64> {
        let k = wrap_k(k);
        let (vals, _) = solve_bloch(&self.potential, k, self.truncation, p + 1, false)?;
        Ok(vals[p])
    }

    /// Exact Hellmann-Feynman slope at one k.
    pub fn slope_exact(&self, p: usize, k: f64) -> Result<f64> {
        let k = wrap_k(k);
        let (_, slopes) = solve_bloch(&self.potential, k, self.truncation, p + 1, true)?;
        Ok(slopes.expect("slopes requested")[p])
    }

    /// Min adjacent gap at one k from a fresh solve.
    pub fn gap_exact(&self, p: usize, k: f64) -> Result<f64> {
        let k = wrap_k(k);
        let (vals, _) = solve_bloch(&self.potential, k, self.truncation, p + 2, false)?;
        let below = if p > 0 { vals[p] - vals[p - 1] } else { f64::INFINITY };
        let above = if p + 1 < vals.len() { vals[p + 1] - vals[p] } else { f64::INFINITY };
        Ok(below.min(above))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,p,lambda,dlambda,d2lambda,gap\n");
        for p in 0..self.n_bands() {
            for i in 0..self.n_k() {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    self.k_grid[i],
                    p + 1,
                    self.lambda[p][i],
                    self.dlambda[p][i],
                    self.d2lambda[p][i],
                    self.gap[p][i]
                ));
            }
        }
        s
    }
}

pub fn wrap_k(k: f64) -> f64 {
    let mut k = (k + 0.5).rem_euclid(1.0) - 0.5;
    if k >= 0.5 {
        k = -0.5;
    }
    k
}

/// One solution of lambda_p(k) = mu.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FermiPoint {
    /// 1-based band index.
    pub band: usize,
    pub k: f64,
    /// Hellmann-Feynman slope at the root; for tangent (kink) roots the
    /// signed mean of the one-sided slopes.
    pub slope: f64,
    /// One-sided slopes (left, right) from the table; differ from `slope`
    /// only at degenerate fold points.
    pub slope_sides: (f64, f64),
    pub gap: f64,
    pub simple: bool,
    /// |slope| below the criticality threshold (band edge / van Hove).
    pub critical: bool,
    /// Root found by tangency detection at a fold point rather than a sign
    /// change (the two symmetric roots coincide there).
    pub tangent: bool,
}

const ROOT_CRITICAL_TOL: f64 = 1e-8;

/// All solutions of lambda_p(k) = mu over the tabulated bands: bracketing on
/// the sign changes of the table, bisection on the cubic interpolant, then
/// Newton polish with exact eigensolves to 1e-12.
pub fn fermi_set(bs: &BandStructure, mu: f64) -> Result<Vec<FermiPoint>> {
    if mu > bs.reliable_ceiling() {
        return Err(Error::Validation(format!(
            "mu={mu} above tabulated band ceiling {}",
            bs.reliable_ceiling()
        )));
    }
    let n = bs.n_k();
    let dk = 1.0 / n as f64;
    let mut points: Vec<FermiPoint> = Vec::new();
    for p in 0..bs.n_bands() {
        if mu < bs.band_min(p) - 1e-12 || mu > bs.band_max(p) + 1e-12 {
            continue;
        }
        let row = &bs.lambda[p];
        let g = |i: usize| row[i % n] - mu;
        let mut roots: Vec<f64> = Vec::new();
        for i in 0..n {
            let (a, b) = (g(i), g(i + 1));
            if a == 0.0 {
                roots.push(bs.k_grid[i]);
            } else if a * b < 0.0 {
                // bisect the interpolant inside [k_i, k_i + dk]
                let (mut lo, mut hi) = (bs.k_grid[i], bs.k_grid[i] + dk);
                let flo = bs.eval_band(p, lo) - mu;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let fm = bs.eval_band(p, mid) - mu;
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if (fm > 0.0) == (flo > 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            } else {
                // Tangency at a fold point: an extremum between grid nodes
                // that just touches mu would be missed by sign changes. The
                // fold points k = 0, +-1/2 are grid nodes; detect value
                // matches there.
                if g(i).abs() < 1e-9 && !roots.iter().any(|r| (r - bs.k_grid[i]).abs() < dk / 2.0)
                {
                    roots.push(bs.k_grid[i]);
                }
            }
        }
        // Newton polish with exact eigensolves where the band is simple.
        for k0 in roots {
            let mut k = wrap_k(k0);
            let gap = bs.gap_exact(p, k)?;
            let simple = gap > DEGENERACY_TOL;
            let mut slope;
            if simple {
                slope = bs.slope_exact(p, k)?;
                for _ in 0..5 {
                    if slope.abs() < ROOT_CRITICAL_TOL {
                        break;
                    }
                    let f = bs.eval_band_exact(p, k)? - mu;
                    let step = f / slope;
                    if step.abs() < 1e-15 {
                        break;
                    }
                    k = wrap_k(k - step);
                    slope = bs.slope_exact(p, k)?;
                }
            } else {
                slope = f64::NAN;
            }
            // one-sided table slopes around the root
            let ti = ((k + 0.5) / dk).round() as i64;
            let at = |i: i64| bs.lambda[p][i.rem_euclid(n as i64) as usize];
            let s_left = (at(ti) - at(ti - 1)) / dk;
            let s_right = (at(ti + 1) - at(ti)) / dk;
            let kinked = !simple && s_left.abs() > ROOT_CRITICAL_TOL && s_right.abs() > ROOT_CRITICAL_TOL;
            let eff_slope = if slope.is_nan() {
                0.5 * (s_left + s_right)
            } else {
                slope
            };
            let critical = if kinked {
                false
            } else {
                eff_slope.abs() < ROOT_CRITICAL_TOL
            };
            points.push(FermiPoint {
                band: p + 1,
                k,
                slope: eff_slope,
                slope_sides: (s_left, s_right),
                gap,
                simple,
                critical,
                tangent: false,
            });
        }
    }
    // Dedup roots within tolerance (mod 1), keeping the first.
    let mut out: Vec<FermiPoint> = Vec::new();
    for pt in points {
        let dup = out.iter_mut().find(|q| {
            q.band == pt.band && {
                let d = (q.k - pt.k).rem_euclid(1.0);
                d < 1e-7 || d > 1.0 - 1e-7
            }
        });
        match dup {
            Some(q) => {
                // two bisection roots collapsing onto one fold point
                q.tangent = true;
            }
            None => out.push(pt),
        }
    }
    out.sort_by(|a, b| (a.band, a.k).partial_cmp(&(b.band, b.k)).unwrap());
    Ok(out)
}

/// Non-criticality / simplicity certificate over an energy window.
#[derive(Debug, Clone, Serialize)]
pub struct WindowCertificate {
    pub a: f64,
    pub b: f64,
    pub simple: bool,
    pub noncritical: bool,
    /// Worst adjacent gap over all Fermi points of the mu-grid.
    pub gap_margin: f64,
    /// Worst |lambda'| over all Fermi points of the mu-grid.
    pub slope_margin: f64,
    pub witness_band: usize,
    pub witness_k: f64,
    pub witness_mu: f64,
}

pub fn check_noncritical_simple(
    bs: &BandStructure,
    a: f64,
    b: f64,
    gap_tol: f64,
    slope_tol: f64,
) -> Result<WindowCertificate> {
    if a >= b {
        return Err(Error::Validation("window a must be below b".into()));
    }
    if b > bs.reliable_ceiling() {
        return Err(Error::Validation("window exceeds tabulated range".into()));
    }
    let n_mu = 65;
    let mut cert = WindowCertificate {
        a,
        b,
        simple: true,
        noncritical: true,
        gap_margin: f64::INFINITY,
        slope_margin: f64::INFINITY,
        witness_band: 0,
        witness_k: 0.0,
        witness_mu: f64::NAN,
    };
    for i in 0..n_mu {
        let mu = a + (b - a) * i as f64 / (n_mu - 1) as f64;
        for pt in fermi_set(bs, mu)? {
            let slope_abs = if pt.slope.is_nan() { 0.0 } else { pt.slope.abs() };
            if pt.gap < cert.gap_margin || slope_abs < cert.slope_margin {
                cert.witness_band = pt.band;
                cert.witness_k = pt.k;
                cert.witness_mu = mu;
            }
            cert.gap_margin = cert.gap_margin.min(pt.gap);
            cert.slope_margin = cert.slope_margin.min(slope_abs);
        }
    }
    // Node scan: a critical value strictly inside (a, b) can slip between
    // mu samples (the Fermi slope decays like sqrt(mu - lambda_edge)), so
    // every tabulated node whose energy lies in the window is checked too.
    for p in 0..bs.n_bands() {
        for i in 0..bs.n_k() {
            let lam = bs.lambda[p][i];
            if lam < a || lam > b {
                continue;
            }
            let (slope_abs, gap) = if bs.degenerate[p][i] {
                // band crossing: simplicity fails outright
                (f64::INFINITY, 0.0)
            } else {
                (bs.dlambda[p][i].abs(), bs.gap[p][i])
            };
            if gap < cert.gap_margin || slope_abs < cert.slope_margin {
                cert.witness_band = p;
                cert.witness_k = bs.k_grid[i];
                cert.witness_mu = lam;
            }
            cert.gap_margin = cert.gap_margin.min(gap);
            cert.slope_margin = cert.slope_margin.min(slope_abs);
        }
    }
    if !cert.gap_margin.is_finite() {
        // window misses the spectrum entirely: vacuously certified
        cert.gap_margin = f64::INFINITY;
        cert.slope_margin = f64::INFINITY;
        return Ok(cert);
    }
    cert.simple = cert.gap_margin > gap_tol;
    cert.noncritical = cert.slope_margin > slope_tol;
    Ok(cert)
}
