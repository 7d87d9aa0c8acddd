//! Simulate the non-standard limit law of the estimator at rho = 1.
//!
//! ```sh
//! cargo run --release --example limit_distribution [T] [draws]
//! ```
//!
//! The rho component converges at rate N^{1/4}. Prints its moments, the
//! variance of Z1 against the closed form and the conditional sign of the
//! root for several T.

use nalgebra::DMatrix;
use panel_mmle::inference::z1_variance;
use panel_mmle::limit::{signed_root_mean, mean_sd, LimitSimulator};

fn main() {
    let mut args = std::env::args().skip(1);
    let t: usize = args.next().map(|s| s.parse().expect("T")).unwrap_or(4);
    let n: usize = args.next().map(|s| s.parse().expect("draws")).unwrap_or(200_000);

    let sim = LimitSimulator::new(t, 1.0, &DMatrix::zeros(0, 0)).unwrap();
    let draws = sim.draw(n, 1);
    let z1: Vec<f64> = draws.iter().map(|d| d.z1).collect();
    let rho: Vec<f64> = draws.iter().map(|d| d.rho_component).collect();
    let lower: Vec<f64> = draws.iter().map(|d| d.rho_lower_root).collect();
    let sig: Vec<f64> = draws.iter().map(|d| d.sigma_component).collect();

    let (_, sd_z1) = mean_sd(&z1);
    println!("T = {t}, {n} draws");
    println!("Var(Z1) = {:.5} (closed form {:.5})", sd_z1 * sd_z1, z1_variance(t));
    println!("P(Z1 > 0) = {:.4}", z1.iter().filter(|z| **z > 0.0).count() as f64 / n as f64);
    for (name, v) in [("rho (signed root)", &rho), ("rho (lower root)", &lower), ("sigma2", &sig)] {
        let (m, s) = mean_sd(v);
        println!("{name:18} mean={m:+.4} sd={s:.4}");
    }
    let d = sim.deriv();
    println!("limits of scaled score derivatives: d3={:.4} d4={:.4} d5={:.4}", d.d3, d.d4, d.d5);

    for t in [2, 3, 4, 6, 9] {
        let s = signed_root_mean(t, n, 2).unwrap();
        println!("T={t}: E[signed root | Z1 > 0] = {:+.5} (se {:.5})", s.mean, s.std_error);
    }
}
