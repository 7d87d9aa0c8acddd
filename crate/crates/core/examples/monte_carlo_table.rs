//! Run a small Monte Carlo table: MMLE-C bias, RMSE and the share of samples
//! without a local maximum, plus QLM rejection rates.
//!
//! ```sh
//! cargo run --release --example monte_carlo_table [config.json] [reps]
//! ```
//!
//! With a config path the cells come from that file, otherwise from a
//! built-in grid. Output is CSV on stdout.

use panel_mmle::config::ExperimentConfig;
use panel_mmle::montecarlo::{run_experiment, Design, DesignSpec, McTable, TestSpec};
use panel_mmle::EstimatorKind;

fn main() {
    let mut args = std::env::args().skip(1);
    let table = match args.next() {
        Some(path) => {
            let text = std::fs::read_to_string(&path).expect("read config");
            let mut cfg = ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{e}"));
            if let Some(r) = args.next() {
                cfg = cfg.with_reps(r.parse().expect("reps"));
            }
            cfg.run(|i, n, e| eprintln!("[{i}/{n}] {} rho={} N={} T={}", e.spec.design.label(), e.spec.rho, e.spec.n_units, e.spec.n_periods))
                .unwrap()
        }
        None => {
            let mut table = McTable::default();
            for (j, rho) in [0.5, 0.8, 1.0].into_iter().enumerate() {
                let spec = DesignSpec::new(Design::S, 4, 100, rho, 500, 1 + j as u64);
                let t = run_experiment(spec, &[EstimatorKind::Lsdv, EstimatorKind::MmleC], &[TestSpec::QlmTrueRho]).unwrap();
                table.rows.extend(t.rows);
            }
            table
        }
    };
    print!("{}", table.to_csv_string().unwrap());
}
