//! Confidence set for rho by inverting the QLM test over a grid.
//!
//! ```sh
//! cargo run --example qlm_confidence_set
//! ```

use panel_mmle::inference::qlm_confidence_set;
use panel_mmle::montecarlo::{generate_panel, Design, DesignSpec};

fn main() {
    let grid: Vec<f64> = (0..=200).map(|i| -0.99 + 0.01 * i as f64).filter(|r| *r <= 1.0 + 1e-12).collect();
    for rho in [0.5, 0.9, 1.0] {
        let spec = DesignSpec::new(Design::S, 9, 200, rho, 1, 21);
        let data = generate_panel(&spec, 0).unwrap();
        let set = qlm_confidence_set(&data, 0.05, &grid).unwrap();
        let shown: Vec<String> = set.iter().map(|(a, b)| format!("[{a:.2}, {b:.2}]")).collect();
        println!("true rho = {rho}: 95% set {}", shown.join(" u "));
    }
}
