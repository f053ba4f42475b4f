//! Fits every estimator on one Model 1 draw and reports timings.

use std::time::Instant;

use sslinfer::data::ContrastVector;
use sslinfer::estimators::{Analysis, AnalysisOptions, Method};
use sslinfer::sim::{generate, Model};

fn main() -> sslinfer::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let (ds, truth) = generate(Model::One, 300, 2400, 100, seed)?;
    let analysis = Analysis::new(&ds, AnalysisOptions::new(seed))?;
    for method in Method::PRIMARY {
        let start = Instant::now();
        let fit = analysis.fit(method, 1.0)?;
        for j in [0, 5] {
            let ci = fit.infer(&ContrastVector::unit(ds.p(), j)?, 0.05)?;
            println!(
                "{method:>9} theta{}: {:+.3} [{:+.3}, {:+.3}] truth {:+.2}",
                j + 1,
                ci.estimate,
                ci.ci_low,
                ci.ci_high,
                truth[j]
            );
        }
        println!("{method:>9} took {:.2?}", start.elapsed());
    }
    Ok(())
}
