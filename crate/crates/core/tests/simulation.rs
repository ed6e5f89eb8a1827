use ppkernel::pointpat::{
    derive_seed, format_patterns, make_grid, parse_patterns, simulate_hppp, simulate_pcpp, simulate_pcpp_detailed,
    LabeledPatternSet, Point, PointPattern, Window,
};
use proptest::prelude::*;
use std::path::Path;

const RUNS: u64 = 10_000;

/// Sample mean and unbiased variance.
fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Checks sample mean and variance of Poisson(mu) draws against 3 standard
/// errors. For a Poisson law the sample variance has variance
/// (mu + 2 mu^2 n/(n-1)) / n.
fn assert_poisson(counts: &[f64], mu: f64) {
    let n = counts.len() as f64;
    let (mean, var) = moments(counts);
    let se_mean = (mu / n).sqrt();
    let se_var = ((mu + 2.0 * mu * mu * n / (n - 1.0)) / n).sqrt();
    assert!((mean - mu).abs() <= 3.0 * se_mean, "mean {mean} vs {mu} (se {se_mean})");
    assert!((var - mu).abs() <= 3.0 * se_var, "variance {var} vs {mu} (se {se_var})");
}

#[test]
fn hppp_counts_follow_poisson_law() {
    let counts: Vec<f64> = (0..RUNS)
        .map(|i| simulate_hppp(100.0, Window::unit(), derive_seed(11, 0, i)).unwrap().len() as f64)
        .collect();
    assert_poisson(&counts, 100.0);
}

#[test]
fn hppp_scales_with_window_area() {
    let w = Window::new(-1.0, 1.0, 0.0, 0.5).unwrap();
    let counts: Vec<f64> = (0..RUNS)
        .map(|i| {
            let p = simulate_hppp(30.0, w, derive_seed(12, 0, i)).unwrap();
            assert!(p.points().iter().all(|q| w.contains(q)));
            p.len() as f64
        })
        .collect();
    assert_poisson(&counts, 30.0);
}

#[test]
fn pcpp_parents_are_poisson_and_offspring_exact() {
    let mut parents = Vec::new();
    let mut before = Vec::new();
    for i in 0..RUNS {
        let r = simulate_pcpp_detailed(6.0, 6, 0.2, Window::unit(), derive_seed(13, 0, i)).unwrap();
        assert_eq!(r.unclipped, 6 * r.parents.len());
        assert!(r.pattern.len() <= r.unclipped);
        assert!(r.pattern.points().iter().all(|q| Window::unit().contains(q)));
        parents.push(r.parents.len() as f64);
        before.push(r.unclipped as f64);
    }
    assert_poisson(&parents, 6.0);
    // 6 * Poisson(6): mean 36, variance 216
    let (mean, _) = moments(&before);
    let se = (216.0 / RUNS as f64).sqrt();
    assert!((mean - 36.0).abs() <= 3.0 * se, "pre-clipping mean {mean}");
}

#[test]
fn pcpp_matches_detailed_variant() {
    for seed in 0..20 {
        let a = simulate_pcpp(6.0, 6, 0.2, Window::unit(), seed).unwrap();
        let b = simulate_pcpp_detailed(6.0, 6, 0.2, Window::unit(), seed).unwrap();
        assert_eq!(a, b.pattern);
    }
}

#[test]
fn simulator_argument_errors() {
    assert!(simulate_hppp(-1.0, Window::unit(), 0).is_err());
    assert!(simulate_pcpp(-1.0, 6, 0.2, Window::unit(), 0).is_err());
    assert!(simulate_pcpp(6.0, 6, 0.0, Window::unit(), 0).is_err());
    assert!(simulate_pcpp(6.0, 0, 0.2, Window::unit(), 0).unwrap().is_empty());
}

#[test]
fn grid_is_bitwise_reproducible() {
    let a = make_grid(Window::unit(), 0.02).unwrap();
    let b = make_grid(Window::unit(), 0.02).unwrap();
    assert_eq!(a.len(), 2601);
    assert_eq!(a.anchors(), b.anchors());
}

fn arb_set() -> impl Strategy<Value = LabeledPatternSet> {
    let pattern = (
        prop::collection::vec((0.0f64..=2.0, -1.0f64..=1.0), 0..12),
        prop::option::of("[a-z]{1,6}"),
    );
    prop::collection::vec(pattern, 0..6).prop_map(|specs| {
        let w = Window::new(0.0, 2.0, -1.0, 1.0).unwrap();
        let patterns = specs
            .into_iter()
            .enumerate()
            .map(|(i, (pts, label))| {
                let points = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
                let mut p = PointPattern::new(points, w).unwrap().with_id(format!("id{i}"));
                p.label = label;
                p
            })
            .collect();
        LabeledPatternSet::new(w, patterns).unwrap()
    })
}

proptest! {
    #[test]
    fn pattern_csv_round_trips(set in arb_set()) {
        let text = format_patterns(&set);
        let back = parse_patterns(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(back.window(), set.window());
        prop_assert_eq!(back.patterns(), set.patterns());
        prop_assert_eq!(format_patterns(&back), text);
    }
}
