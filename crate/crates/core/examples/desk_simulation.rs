//! Small Model 1 Monte-Carlo run printing the summary table.
//!
//! `cargo run --release --example desk_simulation -- <reps> <p> <seed>`

use sslinfer::estimators::Method;
use sslinfer::sim::{run_simulation, Model, SimConfig, SimTarget};

fn main() -> sslinfer::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u64>().expect("numeric argument"));
    let reps = args.next().unwrap_or(10) as usize;
    let p = args.next().unwrap_or(100) as usize;
    let seed = args.next().unwrap_or(2024);
    let config = SimConfig {
        model: Model::One,
        n: 300,
        ratio: 8,
        p,
        reps,
        psi: 1.0,
        methods: vec![Method::Dlasso1, Method::Dssl, Method::Sssl],
        targets: vec![SimTarget::component(p, 0)?, SimTarget::component(p, 5)?],
        seed,
        alpha: 0.05,
    };
    let report = run_simulation(&config)?;
    println!("{:<8} {:<7} {:>8} {:>8} {:>8} {:>8} {:>6} {:>5}", "method", "target", "bias", "sd", "rmse", "half", "cover", "fail");
    for r in &report.rows {
        println!(
            "{:<8} {:<7} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>6.2} {:>5}",
            r.method.as_str(),
            r.target,
            r.bias,
            r.sd.unwrap_or(f64::NAN),
            r.rmse,
            r.half_len,
            r.coverage,
            r.reps_failed
        );
    }
    Ok(())
}
