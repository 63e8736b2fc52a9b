//! Prints mean NDCG@100 per round on the synthetic corpus.
//!
//! `cargo run --release -p cbir-core --example trend [queries] [methods...]`

use std::time::Instant;

use cbir_core::eval::{run_benchmark, SimulationConfig};
use cbir_core::feedback::Method;
use cbir_core::synthetic::{generate, SyntheticConfig};

fn main() -> cbir_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let queries: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let mut methods: Vec<Method> = args.map(|a| a.parse()).collect::<cbir_core::Result<_>>()?;
    if methods.is_empty() {
        methods = vec![Method::ITML, Method::KDE, Method::SVM];
    }
    let corpus = generate(&SyntheticConfig::default())?;
    let index = corpus.index()?;
    let cfg = SimulationConfig { repetitions: 1, subsample_fraction: 1.0, ..Default::default() };
    for m in methods {
        let start = Instant::now();
        let report = run_benchmark(&index, &corpus.queries(queries), &[m], &cfg)?;
        let curve: Vec<String> = report.curves[0].mean.iter().map(|v| format!("{v:.3}")).collect();
        println!("{m:>10} {:>6.1}s  {}", start.elapsed().as_secs_f64(), curve.join(" "));
        if !report.errors.is_empty() {
            println!("           {} fit errors, first: {}", report.errors.len(), report.errors[0].error.message);
        }
    }
    Ok(())
}
