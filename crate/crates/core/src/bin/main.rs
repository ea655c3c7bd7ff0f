use clap::{Parser, Subcommand};
use ssf_lab::bloch::{compute_bands, fermi_set};
use ssf_lab::boxdisc::{assemble_box_operator, smoothed_ssf_derivative, trace_diff};
use ssf_lab::coeffs::{a0_single_band, a0_weak_coefficient, dual_pairing, gamma0_smoothed};
use ssf_lab::config::{load_config, ExperimentConfig};
use ssf_lab::dos::build_dos_table;
use ssf_lab::effham::{effective_operator, effective_report};
use ssf_lab::error::{Error, Result};
use ssf_lab::exec::{configure_threads, ExecMode};
use ssf_lab::harness::{h_sweep, run_experiment, Observable};
use ssf_lab::limabs::resolvent_scaling_study;
use ssf_lab::model::Perturbation;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ssf-lab", about = "Spectral-shift asymptotics laboratory", version)]
struct Cli {
    /// Plain-text config file (key = value); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir from the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bloch band table over the Brillouin zone -> bands.csv
    Bands,
    /// Integrated density of states and its density -> dos.csv
    Dos,
    /// Fermi set at ssf.mu -> fermi.csv
    Fermi,
    /// Leading coefficients a0(f), a0|band1, the dual pairing and the
    /// mollified gamma0 -> coeffs.json
    Coeffs,
    /// Raw box trace_diff table over the h-grid -> trace.csv
    Trace,
    /// Smoothed spectral-shift derivative over the h-grid -> ssf.csv
    Ssf,
    /// Effective band-1 model at effham.h -> effham.json
    Effham,
    /// Resolvent scaling probe -> limabs.csv, limabs.json
    Limabs,
    /// h-sweep with asymptotic fit for one observable
    Sweep {
        /// trace_diff | smoothed_ssf | effective_trace_diff | resolvent_norm
        #[arg(default_value = "trace_diff")]
        observable: String,
    },
    /// Full pipeline: bands -> certify -> coeffs -> sweeps -> triangle
    Run,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(p) => load_config(&std::fs::read_to_string(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

fn write_out(dir: &PathBuf, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn bands_of(cfg: &ExperimentConfig, mode: ExecMode) -> Result<ssf_lab::bloch::BandStructure> {
    compute_bands(
        &cfg.potential()?,
        cfg.band_k_points,
        cfg.band_truncation,
        cfg.band_count,
        mode,
    )
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let dir = out_dir(cli, &cfg);
    let mode = ExecMode::default();
    match &cli.cmd {
        Cmd::Bands => {
            let bs = bands_of(&cfg, mode)?;
            write_out(&dir, "bands.csv", &bs.to_csv())?;
        }
        Cmd::Dos => {
            let bs = bands_of(&cfg, mode)?;
            let lo = bs.band_min(0) - 0.05;
            let hi = bs.reliable_ceiling();
            let grid: Vec<f64> = (0..=512).map(|i| lo + (hi - lo) * i as f64 / 512.0).collect();
            let table = build_dos_table(&bs, &grid)?;
            write_out(&dir, "dos.csv", &table.to_csv())?;
        }
        Cmd::Fermi => {
            let bs = bands_of(&cfg, mode)?;
            let pts = fermi_set(&bs, cfg.ssf_mu)?;
            let mut csv = String::from("band,k,slope,gap,critical\n");
            for p in &pts {
                let _ = writeln!(csv, "{},{},{},{},{}", p.band, p.k, p.slope, p.gap, p.critical);
            }
            write_out(&dir, "fermi.csv", &csv)?;
        }
        Cmd::Coeffs => {
            let bs = bands_of(&cfg, mode)?;
            let phi = cfg.perturbation()?;
            let f = cfg.test_function()?;
            let a0 = a0_weak_coefficient(&bs, &phi, &f, cfg.quad_tol)?;
            let a0_band1 = a0_single_band(&bs, &phi, &f, 1, cfg.quad_tol)?;
            let pairing = dual_pairing(&bs, &phi, &f, cfg.quad_tol)?;
            let g0 = gamma0_smoothed(&bs, &phi, cfg.ssf_mu, cfg.ssf_epsilon, cfg.quad_tol.max(1e-4))?;
            let defect = (a0.value + pairing.value).abs();
            let budget = a0.total_err() + pairing.total_err();
            let body = serde_json::json!({
                "a0": a0,
                "a0_band1": a0_band1,
                "dual_pairing": pairing,
                "duality_defect": defect,
                "duality_budget": budget,
                "gamma0_smoothed_at_mu": g0,
            });
            write_out(&dir, "coeffs.json", &serde_json::to_string_pretty(&body).unwrap())?;
        }
        Cmd::Trace => {
            let v = cfg.potential()?;
            let phi = cfg.perturbation()?;
            let f = cfg.test_function()?;
            let op0 = assemble_box_operator(
                &v,
                &Perturbation::zero(),
                cfg.h_grid[0],
                cfg.box_cells,
                cfg.box_points_per_cell,
            )?
            .with_ceiling(cfg.dense_ceiling);
            let mut csv = String::from("h,L,N,trace_diff,boundary_tol\n");
            for &h in &cfg.h_grid {
                let op = assemble_box_operator(&v, &phi, h, cfg.box_cells, cfg.box_points_per_cell)?
                    .with_ceiling(cfg.dense_ceiling);
                let t = trace_diff(&op, &op0, &f)?;
                let _ = writeln!(csv, "{h},{},{},{t},{}", op.l, op.n, op.boundary_tol);
            }
            write_out(&dir, "trace.csv", &csv)?;
        }
        Cmd::Ssf => {
            let v = cfg.potential()?;
            let phi = cfg.perturbation()?;
            let op0 = assemble_box_operator(
                &v,
                &Perturbation::zero(),
                cfg.h_grid[0],
                cfg.box_cells,
                cfg.box_points_per_cell,
            )?
            .with_ceiling(cfg.dense_ceiling);
            let mut csv = String::from("h,mu,eps,value,spacing,under_resolved\n");
            for &h in &cfg.h_grid {
                let op = assemble_box_operator(&v, &phi, h, cfg.box_cells, cfg.box_points_per_cell)?
                    .with_ceiling(cfg.dense_ceiling);
                let s = smoothed_ssf_derivative(&op, &op0, cfg.ssf_mu, cfg.ssf_epsilon)?;
                let _ = writeln!(
                    csv,
                    "{h},{},{},{},{},{}",
                    cfg.ssf_mu, cfg.ssf_epsilon, s.value, s.spacing, s.under_resolved
                );
            }
            write_out(&dir, "ssf.csv", &csv)?;
        }
        Cmd::Effham => {
            let bs = bands_of(&cfg, mode)?;
            let phi = cfg.perturbation()?;
            let f = cfg.test_function()?;
            let a0b1 = a0_single_band(&bs, &phi, &f, 1, cfg.quad_tol)?;
            let eff = effective_operator(&bs, &phi, cfg.effham_h, cfg.effham_modes)?;
            let report = effective_report(&eff, &f, a0b1.value)?;
            write_out(&dir, "effham.json", &serde_json::to_string_pretty(&report).unwrap())?;
        }
        Cmd::Limabs => {
            let bs = bands_of(&cfg, mode)?;
            let phi = cfg.perturbation()?;
            let study = resolvent_scaling_study(&cfg, &bs, &phi, mode)?;
            write_out(&dir, "limabs.csv", &study.to_csv())?;
            write_out(&dir, "limabs.json", &serde_json::to_string_pretty(&study).unwrap())?;
        }
        Cmd::Sweep { observable } => {
            let obs = Observable::parse(observable)?;
            let report = h_sweep(&cfg, obs, mode, Some(&dir))?;
            write_out(&dir, &format!("{}_fit.json", obs.as_str()), &report.to_json())?;
            println!(
                "c0 = {} c1 = {} c2 = {} (residual {})",
                report.fit.coeffs[0],
                report.fit.coeffs[1],
                report.fit.coeffs[2],
                report.fit.residual_norm
            );
        }
        Cmd::Run => {
            let summary = run_experiment(&cfg, &dir, mode)?;
            print!("{}", std::fs::read_to_string(dir.join("summary.txt"))?);
            if summary.certification_failed() {
                return Err(Error::Certification(
                    "one or more pipeline stages failed; see summary.json".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
