//! Hybrid run on the built-in synthetic population.
//!
//! `cargo run --release --example synthetic_demo -- [clusters]`

use fairrec_core::pipeline::{cmd_run, RunConfig};

fn main() {
    let clusters = std::env::args().nth(1).map_or(3, |s| s.parse().expect("clusters must be an integer"));
    let dir = std::env::temp_dir().join(format!("fairrec_demo_{}", std::process::id()));
    fairrec_core::synthetic::write_files(&dir, 1000, 1).expect("write synthetic data");
    let mut cfg = RunConfig::new(dir.join("data.csv"), dir.join("schema.json"), 7, dir.join("out"));
    cfg.clusters = clusters;
    let start = std::time::Instant::now();
    match cmd_run(&cfg) {
        Ok(report) => {
            print!("{}", report.text_table());
            println!("\n{:.2?}; outputs in {}", start.elapsed(), cfg.out.display());
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
