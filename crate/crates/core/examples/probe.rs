use ssf_lab::bloch::compute_bands;
use ssf_lab::config::ExperimentConfig;
use ssf_lab::exec::ExecMode;
use ssf_lab::limabs::resolvent_scaling_study;
use std::time::Instant;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.h_grid = vec![1.0 / 8.0, 1.0 / 10.0, 1.0 / 12.0];
    cfg.limabs_cell_factor = 32.0;
    cfg.limabs_eta0 = 4.4e-4;
    let v = cfg.potential().unwrap();
    let phi = cfg.perturbation().unwrap();
    let mode = ExecMode::default();
    let bs = compute_bands(&v, cfg.band_k_points, cfg.band_truncation, cfg.band_count, mode).unwrap();

    let t0 = Instant::now();
    match resolvent_scaling_study(&cfg, &bs, &phi, mode) {
        Ok(st) => {
            println!("{}", st.to_csv());
            println!(
                "slope = {:?} plateau = {} flag = {:?} margin = {} ({:.1?})",
                st.slope, st.plateau, st.flag, st.margin, t0.elapsed()
            );
        }
        Err(e) => println!("limabs err {e}"),
    }
}
