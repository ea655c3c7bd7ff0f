//! Plain-text experiment configuration: one `key = value` per line, `#`
//! comments. Unknown keys are rejected; missing keys take the documented
//! defaults. `to_text` emits the canonical form, and `parse(to_text(c)) == c`.

use crate::error::{Error, Result};
use crate::model::{Perturbation, PerturbationFamily, PeriodicPotential, TestFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Potential Fourier modes as (m, re, im); conjugates filled on build.
    pub potential_coeffs: Vec<(i32, f64, f64)>,
    pub perturbation_family: String,
    pub perturbation_params: Vec<f64>,
    pub perturbation_delta: f64,
    pub h_grid: Vec<f64>,
    pub box_cells: usize,
    pub box_points_per_cell: usize,
    pub band_truncation: usize,
    pub band_k_points: usize,
    pub band_count: usize,
    pub window_a: f64,
    pub window_b: f64,
    pub tf_center: f64,
    pub tf_halfwidth: f64,
    pub tf_amplitude: f64,
    pub output_dir: String,
    pub quad_tol: f64,
    pub gap_tol: f64,
    pub slope_tol: f64,
    pub ssf_epsilon: f64,
    pub ssf_mu: f64,
    pub effham_h: f64,
    pub effham_modes: usize,
    pub limabs_alpha: f64,
    pub limabs_l: u32,
    pub limabs_eta0: f64,
    pub limabs_cell_factor: f64,
    pub limabs_points_per_cell: usize,
    pub dense_ceiling: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // Standard configuration: V = 2 cos y, phi = -0.2 (1+x^2)^{-1}.
        // Band 1 of this potential spans [-1.07012970, -1.06479573]; the
        // window sits in its upper (concave) part and the test function is
        // centered on the band mean.
        ExperimentConfig {
            potential_coeffs: vec![(1, 1.0, 0.0)],
            perturbation_family: "power_law".into(),
            perturbation_params: vec![-0.2, 2.0],
            perturbation_delta: 2.0,
            h_grid: vec![
                1.0 / 8.0,
                1.0 / 12.0,
                1.0 / 16.0,
                1.0 / 24.0,
                1.0 / 32.0,
                1.0 / 48.0,
            ],
            box_cells: 384,
            box_points_per_cell: 16,
            band_truncation: 32,
            band_k_points: 2048,
            band_count: 8,
            window_a: -1.0670,
            window_b: -1.0655,
            tf_center: -1.06747,
            tf_halfwidth: 0.1,
            tf_amplitude: 1.0,
            output_dir: "out".into(),
            quad_tol: 1e-8,
            gap_tol: 1e-6,
            slope_tol: 1e-6,
            ssf_epsilon: 0.05,
            ssf_mu: -1.06747,
            effham_h: 1.0 / 64.0,
            effham_modes: 2047,
            limabs_alpha: 1.0,
            limabs_l: 1,
            limabs_eta0: 0.05,
            limabs_cell_factor: 10.0,
            limabs_points_per_cell: 8,
            dense_ceiling: 8192,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Validation(format!("{key}: unparsable number '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::Validation(format!("{key}: unparsable integer '{v}'")))
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| parse_f64(key, s))
        .collect()
}

/// Parse the plain-text config format.
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Validation(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "potential.coeffs" => {
                let mut modes = Vec::new();
                for item in value.split(',') {
                    let parts: Vec<&str> = item.trim().split(':').collect();
                    if parts.len() != 3 {
                        return Err(Error::Validation(format!(
                            "potential.coeffs: expected m:re:im, got '{item}'"
                        )));
                    }
                    let m = parts[0].parse::<i32>().map_err(|_| {
                        Error::Validation(format!("potential.coeffs: bad mode '{}'", parts[0]))
                    })?;
                    modes.push((m, parse_f64(key, parts[1])?, parse_f64(key, parts[2])?));
                }
                cfg.potential_coeffs = modes;
            }
            "perturbation.family" => {
                if !["power_law", "gaussian", "bump", "zero"].contains(&value) {
                    return Err(Error::Validation(format!(
                        "perturbation.family: unknown family '{value}'"
                    )));
                }
                cfg.perturbation_family = value.to_string();
            }
            "perturbation.params" => cfg.perturbation_params = parse_f64_list(key, value)?,
            "perturbation.delta" => {
                let d = parse_f64(key, value)?;
                if d <= 1.0 {
                    return Err(Error::Validation(
                        "delta must exceed dimension n=1".into(),
                    ));
                }
                cfg.perturbation_delta = d;
            }
            "h.grid" => {
                let g = parse_f64_list(key, value)?;
                if g.iter().any(|&h| h <= 0.0) {
                    return Err(Error::Validation("h.grid: h values must be positive".into()));
                }
                cfg.h_grid = g;
            }
            "box.cells" => cfg.box_cells = parse_usize(key, value)?,
            "box.points_per_cell" => cfg.box_points_per_cell = parse_usize(key, value)?,
            "band.truncation" => cfg.band_truncation = parse_usize(key, value)?,
            "band.k_points" => cfg.band_k_points = parse_usize(key, value)?,
            "band.count" => cfg.band_count = parse_usize(key, value)?,
            "window.a" => cfg.window_a = parse_f64(key, value)?,
            "window.b" => cfg.window_b = parse_f64(key, value)?,
            "test_function.center" => cfg.tf_center = parse_f64(key, value)?,
            "test_function.halfwidth" => cfg.tf_halfwidth = parse_f64(key, value)?,
            "test_function.amplitude" => cfg.tf_amplitude = parse_f64(key, value)?,
            "output.dir" => cfg.output_dir = value.to_string(),
            "quad.tol" => cfg.quad_tol = parse_f64(key, value)?,
            "certify.gap_tol" => cfg.gap_tol = parse_f64(key, value)?,
            "certify.slope_tol" => cfg.slope_tol = parse_f64(key, value)?,
            "ssf.epsilon" => cfg.ssf_epsilon = parse_f64(key, value)?,
            "ssf.mu" => cfg.ssf_mu = parse_f64(key, value)?,
            "effham.h" => cfg.effham_h = parse_f64(key, value)?,
            "effham.modes" => cfg.effham_modes = parse_usize(key, value)?,
            "limabs.alpha" => cfg.limabs_alpha = parse_f64(key, value)?,
            "limabs.l" => cfg.limabs_l = parse_usize(key, value)? as u32,
            "limabs.eta0" => cfg.limabs_eta0 = parse_f64(key, value)?,
            "limabs.cell_factor" => cfg.limabs_cell_factor = parse_f64(key, value)?,
            "limabs.points_per_cell" => cfg.limabs_points_per_cell = parse_usize(key, value)?,
            "dense.ceiling" => cfg.dense_ceiling = parse_usize(key, value)?,
            _ => {
                return Err(Error::Validation(format!("unknown config key '{key}'")));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.perturbation_delta <= 1.0 {
            return Err(Error::Validation("delta must exceed dimension n=1".into()));
        }
        if self.window_a >= self.window_b {
            return Err(Error::Validation("window.a must be below window.b".into()));
        }
        if self.tf_halfwidth <= 0.0 {
            return Err(Error::Validation("test_function.halfwidth must be positive".into()));
        }
        if self.box_points_per_cell < 16 {
            return Err(Error::Validation("box.points_per_cell must be >= 16".into()));
        }
        if self.band_count > 2 * self.band_truncation + 1 {
            return Err(Error::Validation(
                "band.count exceeds 2*band.truncation + 1".into(),
            ));
        }
        if !(self.limabs_alpha > self.limabs_l as f64 - 0.5) {
            return Err(Error::Validation(
                "limabs.alpha must exceed l - 1/2".into(),
            ));
        }
        self.perturbation()?;
        self.potential()?;
        Ok(())
    }

    /// Canonical serialization; `load_config(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let coeffs: Vec<String> = self
            .potential_coeffs
            .iter()
            .map(|(m, re, im)| format!("{m}:{re}:{im}"))
            .collect();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        s.push_str(&format!("potential.coeffs = {}\n", coeffs.join(",")));
        s.push_str(&format!("perturbation.family = {}\n", self.perturbation_family));
        s.push_str(&format!("perturbation.params = {}\n", join(&self.perturbation_params)));
        s.push_str(&format!("perturbation.delta = {}\n", self.perturbation_delta));
        s.push_str(&format!("h.grid = {}\n", join(&self.h_grid)));
        s.push_str(&format!("box.cells = {}\n", self.box_cells));
        s.push_str(&format!("box.points_per_cell = {}\n", self.box_points_per_cell));
        s.push_str(&format!("band.truncation = {}\n", self.band_truncation));
        s.push_str(&format!("band.k_points = {}\n", self.band_k_points));
        s.push_str(&format!("band.count = {}\n", self.band_count));
        s.push_str(&format!("window.a = {}\n", self.window_a));
        s.push_str(&format!("window.b = {}\n", self.window_b));
        s.push_str(&format!("test_function.center = {}\n", self.tf_center));
        s.push_str(&format!("test_function.halfwidth = {}\n", self.tf_halfwidth));
        s.push_str(&format!("test_function.amplitude = {}\n", self.tf_amplitude));
        s.push_str(&format!("output.dir = {}\n", self.output_dir));
        s.push_str(&format!("quad.tol = {}\n", self.quad_tol));
        s.push_str(&format!("certify.gap_tol = {}\n", self.gap_tol));
        s.push_str(&format!("certify.slope_tol = {}\n", self.slope_tol));
        s.push_str(&format!("ssf.epsilon = {}\n", self.ssf_epsilon));
        s.push_str(&format!("ssf.mu = {}\n", self.ssf_mu));
        s.push_str(&format!("effham.h = {}\n", self.effham_h));
        s.push_str(&format!("effham.modes = {}\n", self.effham_modes));
        s.push_str(&format!("limabs.alpha = {}\n", self.limabs_alpha));
        s.push_str(&format!("limabs.l = {}\n", self.limabs_l));
        s.push_str(&format!("limabs.eta0 = {}\n", self.limabs_eta0));
        s.push_str(&format!("limabs.cell_factor = {}\n", self.limabs_cell_factor));
        s.push_str(&format!("limabs.points_per_cell = {}\n", self.limabs_points_per_cell));
        s.push_str(&format!("dense.ceiling = {}\n", self.dense_ceiling));
        s
    }

    /// sha256 of the canonical text, hex-encoded; keys caches and reports.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_text().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn potential(&self) -> Result<PeriodicPotential> {
        PeriodicPotential::from_modes(&self.potential_coeffs)
    }

    pub fn perturbation(&self) -> Result<Perturbation> {
        let p = &self.perturbation_params;
        let family = match self.perturbation_family.as_str() {
            "zero" => return Ok(Perturbation::zero()),
            "power_law" => {
                if p.len() != 2 {
                    return Err(Error::Validation(
                        "power_law takes params c,s".into(),
                    ));
                }
                PerturbationFamily::PowerLaw { c: p[0], s: p[1] }
            }
            "gaussian" => {
                if p.len() != 2 {
                    return Err(Error::Validation("gaussian takes params c,sigma".into()));
                }
                PerturbationFamily::Gaussian { c: p[0], sigma: p[1] }
            }
            "bump" => {
                if p.len() != 2 {
                    return Err(Error::Validation("bump takes params c,r".into()));
                }
                PerturbationFamily::Bump { c: p[0], r: p[1] }
            }
            other => return Err(Error::Validation(format!("unknown family '{other}'"))),
        };
        Perturbation::with_fitted_certificate(family, self.perturbation_delta)
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        crate::model::build_test_function(self.tf_center, self.tf_halfwidth, self.tf_amplitude)
    }
}
