use clipshift::harness::{self, ExperimentConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let config = ExperimentConfig::from_toml_str(r#"
        [experiment]
        algorithm = "dicesgd"
        steps = 10000000
        trials = 100
        seed = 20240
        thin = 10000
        theta0 = [5.0]
        [loss]
        kind = "quadratic"
        a = 10.0
        [distribution]
        kind = "bernoulli_shift"
        p = 0.1
        b = 1.0
        beta = 0.01
        [optimizer]
        clip = 1.0
        [optimizer.schedule]
        kind = "polynomial"
        a0 = 10.0
        a1 = 100.0
        [oracle]
        kind = "closed_form"
    "#).unwrap();
    let out = harness::run_trials(&config).unwrap();
    let e: Vec<(f64, f64)> = out.aggregate.points.iter()
        .map(|p| (p.t as f64, p.e_norm_sq_mean.unwrap())).collect();
    let tail = &e[e.len() / 2..];
    let n = tail.len() as f64;
    let xm = tail.iter().map(|(x, _)| x).sum::<f64>() / n;
    let ym = tail.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = tail.iter().map(|(x, _)| (x - xm) * (x - xm)).sum();
    let sxy: f64 = tail.iter().map(|(x, y)| (x - xm) * (y - ym)).sum();
    println!("tail mean {:.2}, slope {:+.3e}, elapsed {:?}", ym, sxy / sxx, t0.elapsed());
}
