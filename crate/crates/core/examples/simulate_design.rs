//! Draw one panel from a simulation design and write it as CSV.
//!
//! ```sh
//! cargo run --example simulate_design -- S 0.5 50 4 > panel.csv
//! ```
//!
//! Arguments: design (S, NS or S_CHISQ), rho, N, T and optionally the number
//! of covariates and a seed.

use panel_mmle::montecarlo::{generate_panel, Design, DesignSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let get = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let design = match get(0, "S").as_str() {
        "NS" => Design::Ns,
        "S_CHISQ" => Design::SChisq,
        _ => Design::S,
    };
    let rho: f64 = get(1, "0.5").parse().expect("rho");
    let n: usize = get(2, "50").parse().expect("N");
    let t: usize = get(3, "4").parse().expect("T");
    let mut spec = DesignSpec::new(design, t, n, rho, 1, get(5, "1").parse().expect("seed"));
    spec.n_covariates = get(4, "1").parse().expect("K");
    let data = generate_panel(&spec, 0).expect("valid design");
    data.write_csv(std::io::stdout()).expect("write");
}
