//! Compare the C, W and F estimators when the concentrated likelihood has no
//! local maximum.
//!
//! ```sh
//! cargo run --example weighted_estimators
//! ```
//!
//! With an interior root all three coincide. Otherwise W and F minimize a
//! weighted norm of the full score and their answer depends on the weights.

use nalgebra::DMatrix;
use panel_mmle::estimators::estimate;
use panel_mmle::montecarlo::{generate_panel, Design, DesignSpec};
use panel_mmle::{EstimatorKind, EstimatorOptions};

fn main() {
    let mut spec = DesignSpec::new(Design::S, 4, 100, 1.0, 40, 5);
    spec.n_covariates = 1;
    let weights = [("identity", None), ("rho-heavy", Some(DMatrix::from_diagonal(&vec![100.0, 1.0, 1.0].into())))];

    let mut shown = 0;
    for rep in 0..spec.n_reps as u64 {
        let data = generate_panel(&spec, rep).unwrap();
        let c = estimate(&data, EstimatorKind::MmleC, &EstimatorOptions::default()).unwrap();
        if c.lan_exists && shown > 0 {
            continue;
        }
        println!("rep {rep}: local max exists = {}", c.lan_exists);
        println!("  C                rho={:.4} sigma2={:.4}", c.theta.rho, c.theta.sigma2);
        for (name, w) in &weights {
            let opts = EstimatorOptions { weight: w.clone(), ..EstimatorOptions::default() };
            for kind in [EstimatorKind::MmleW, EstimatorKind::MmleF] {
                let e = estimate(&data, kind, &opts).unwrap();
                println!("  {:2} {name:13} rho={:.4} sigma2={:.4}", kind.label().trim_start_matches("MMLE-"), e.theta.rho, e.theta.sigma2);
            }
        }
        shown += 1;
        if shown == 3 {
            break;
        }
    }
}
