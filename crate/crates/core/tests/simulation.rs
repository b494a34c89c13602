use maxdeficit::distortion::Distortion;
use maxdeficit::measures::premium_lower_bound;
use maxdeficit::model::ExponentialLine;
use maxdeficit::simulate::{
    conditional_max_samples, path_rng, simulate_claim_paths, simulate_max_loss, simulate_state,
};

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn restart_matches_direct_maximum() {
    let line = ExponentialLine::new(10.0, 1.0, 12.0).unwrap();
    let (t, r, n) = (20.0, 7.0, 10_000);
    let restarted: Vec<f64> = (0..n as u64)
        .map(|i| {
            let state = simulate_state(&line, r, &mut path_rng(31, i));
            conditional_max_samples(&line, t, &state, 1, 1000 + i).unwrap()[0]
        })
        .collect();
    let direct = simulate_max_loss(&line, t, n, 32).unwrap();
    let d = ks_statistic(&restarted, direct.samples());
    let critical = 1.628 * (2.0 / n as f64).sqrt();
    assert!(d < critical, "KS {d} >= {critical}");
}

#[test]
fn ks_statistic_detects_shift() {
    let line = ExponentialLine::new(10.0, 1.0, 12.0).unwrap();
    let a = simulate_max_loss(&line, 20.0, 10_000, 1).unwrap();
    let shifted: Vec<f64> = a.samples().iter().map(|x| x + 0.5).collect();
    let b = simulate_max_loss(&line, 20.0, 10_000, 2).unwrap();
    assert!(ks_statistic(a.samples(), &shifted) > 0.05);
    assert!(ks_statistic(a.samples(), b.samples()) < 0.023);
}

#[test]
fn premium_above_bound_deleverages() {
    let line = ExponentialLine::new(10.0, 1.0, 12.0).unwrap();
    let bound = premium_lower_bound(&line, &Distortion::ProportionalHazard { exponent: 0.5 }, 20_000, 5).unwrap();
    let c = 1.05 * bound.estimate;
    let paths = simulate_claim_paths(&line, 10.0, 5000, 6);
    let means: Vec<f64> = (1..=10)
        .map(|s| paths.iter().map(|p| p.loss_at(s as f64, c)).sum::<f64>() / paths.len() as f64)
        .collect();
    assert!(means[0] < 0.0);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}
