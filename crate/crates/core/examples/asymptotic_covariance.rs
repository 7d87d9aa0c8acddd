//! Sandwich covariance of the modified ML estimate and its breakdown near
//! the unit circle.
//!
//! ```sh
//! cargo run --example asymptotic_covariance
//! ```

use panel_mmle::estimators::mmle_c;
use panel_mmle::inference::{asymptotic_covariance, DELTA_SING};
use panel_mmle::montecarlo::{generate_panel, Design, DesignSpec};
use panel_mmle::EstimatorOptions;

fn main() {
    for rho in [0.3, 0.6, 0.9, 1.0] {
        let mut spec = DesignSpec::new(Design::S, 5, 500, rho, 1, 8);
        spec.n_covariates = 2;
        let data = generate_panel(&spec, 0).unwrap();
        let est = mmle_c(&data, &EstimatorOptions::default()).unwrap();
        print!("rho={rho:.1} rho_hat={:.4}: ", est.theta.rho);
        match asymptotic_covariance(&data, &est.theta, None, DELTA_SING) {
            Ok(m) => println!("se = {:.4?}", m.std_errors()),
            Err(e) => println!("{e}"),
        }
    }
}
