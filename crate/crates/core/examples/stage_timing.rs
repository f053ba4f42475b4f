//! Times each cached stage of the pipeline on one Model 1 draw.

use std::time::Instant;

use sslinfer::estimators::{Analysis, AnalysisOptions};
use sslinfer::sim::{generate, Model};

fn main() -> sslinfer::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().unwrap());
    let n = args.next().unwrap_or(300);
    let p = args.next().unwrap_or(100);
    let (ds, _) = generate(Model::One, n, 8 * n, p, 7)?;
    let a = Analysis::new(&ds, AnalysisOptions::new(7))?;
    let t = Instant::now();
    a.omega_labeled()?;
    eprintln!("omega labeled   {:.2?}", t.elapsed());
    let t = Instant::now();
    a.omega_pooled()?;
    eprintln!("omega pooled    {:.2?}", t.elapsed());
    let t = Instant::now();
    a.lasso()?;
    eprintln!("lasso cv        {:.2?}", t.elapsed());
    let t = Instant::now();
    a.surrogate_values()?;
    eprintln!("surrogates      {:.2?}", t.elapsed());
    let t = Instant::now();
    a.theta_d()?;
    eprintln!("theta_d         {:.2?}", t.elapsed());
    let t = Instant::now();
    a.theta_sd()?;
    eprintln!("theta_sd        {:.2?}", t.elapsed());
    let t = Instant::now();
    a.b_matrix()?;
    eprintln!("b matrix        {:.2?}", t.elapsed());
    Ok(())
}
