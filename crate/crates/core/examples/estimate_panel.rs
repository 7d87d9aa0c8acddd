//! Estimate a panel AR(1) with one covariate from CSV.
//!
//! ```sh
//! cargo run --example estimate_panel [path/to/panel.csv]
//! ```
//!
//! Without an argument the bundled `examples/data/sample_panel.csv` is used.

use panel_mmle::estimators::estimate;
use panel_mmle::inference::{asymptotic_covariance, DELTA_SING};
use panel_mmle::{EstimatorKind, EstimatorOptions, PanelDataset};

fn run(path: &str) -> Result<(), Box<dyn std::error::Error>> {
    let data = PanelDataset::read_csv(std::fs::File::open(path)?)?;
    println!("N = {}, T = {}, K = {}", data.n_units(), data.n_periods(), data.n_covariates());

    let opts = EstimatorOptions::default();
    for kind in [
        EstimatorKind::Lsdv,
        EstimatorKind::LsdvBc,
        EstimatorKind::MmleC,
        EstimatorKind::MmleW,
        EstimatorKind::MmleF,
    ] {
        let e = estimate(&data, kind, &opts)?;
        let th = &e.theta;
        print!("{:8} rho = {:.4}  sigma2 = {:.4}  beta = {:.4?}", kind.label(), th.rho, th.sigma2, th.beta.as_slice());
        if kind == EstimatorKind::MmleC {
            print!("  local max found: {}  roots: {:.4?}", e.lan_exists, e.roots);
        }
        println!();
    }

    let c = estimate(&data, EstimatorKind::MmleC, &opts)?;
    match asymptotic_covariance(&data, &c.theta, None, DELTA_SING) {
        Ok(m) => println!("sandwich standard errors (rho, sigma2, beta): {:.4?}", m.std_errors()),
        Err(e) => println!("no sandwich covariance: {e}"),
    }
    Ok(())
}

fn main() {
    let default = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sample_panel.csv");
    let path = std::env::args().nth(1).unwrap_or_else(|| default.to_string());
    if let Err(e) = run(&path) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
