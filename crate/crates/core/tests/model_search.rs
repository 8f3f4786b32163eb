use rand::Rng;
use trailmark::model_search::{evolve_pipelines, random_search, SearchBudget, Targets};
use trailmark::seeds;

/// Two classes separated by a margin on the first 3 columns, plus 9 wide noise columns.
fn separable(seed: u64) -> (Vec<Vec<f64>>, Targets) {
    let mut rng = seeds::rng(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..48 {
        let c = i % 2;
        let sign = if c == 0 { -1.0 } else { 1.0 };
        let mut row: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        for v in row.iter_mut().take(3) {
            *v = sign * rng.random_range(0.3..1.0);
        }
        x.push(row);
        y.push(c);
    }
    (x, Targets::Classes(y))
}

#[test]
fn ga_matches_or_beats_random_search() {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let (x, y) = separable(seed);
        let ga = evolve_pipelines(&x, &y, SearchBudget::new(50, 10), 5, seed).unwrap();
        let rs = random_search(&x, &y, 50, 5, seed).unwrap();
        assert!(ga.evaluations <= 50 && rs.evaluations <= 50);
        detail.push((ga.best_score, rs.best_score));
        wins += usize::from(ga.best_score >= rs.best_score);
    }
    assert!(wins >= 9, "{detail:?}");
}

#[test]
fn search_log_is_reproducible_and_within_budget() {
    let (x, y) = separable(3);
    let a = evolve_pipelines(&x, &y, SearchBudget::new(40, 8), 5, 17).unwrap();
    let b = evolve_pipelines(&x, &y, SearchBudget::new(40, 8), 5, 17).unwrap();
    assert_eq!(a.log, b.log);
    assert!(a.log.len() <= 40);
    let best = a.log.iter().filter_map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, a.best_score);
    let mut prev = f64::NEG_INFINITY;
    for g in &a.generations {
        assert!(g.best_so_far >= prev);
        prev = g.best_so_far;
    }
}

#[test]
fn regression_search_scores_negative_mae() {
    let mut rng = seeds::rng(8);
    let x: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let y = Targets::Values(x.iter().map(|r| 0.2 + 0.6 * r[0]).collect());
    let r = evolve_pipelines(&x, &y, SearchBudget::new(30, 10), 5, 1).unwrap();
    assert!(r.best_score <= 0.0 && r.best_score > -0.1, "{}", r.best_score);
}
