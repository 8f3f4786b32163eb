use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::models::Matrix;
use super::{cv_splits, evaluate_with_folds, GenomeCode, PipelineGenome, Result, SearchError, Targets, GENE_DOMAINS};
use crate::seeds;

const TOURNAMENT: usize = 3;
const CROSSOVER_RATE: f64 = 0.7;
const MUTATION_RATE: f64 = 0.2;
const STAGNATION_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_evaluations: usize,
    pub population: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { max_evaluations: 10_000, population: 50 }
    }
}

impl SearchBudget {
    pub fn new(max_evaluations: usize, population: usize) -> Self {
        Self { max_evaluations, population }
    }

    pub fn generation_cap(&self) -> usize {
        self.max_evaluations.div_ceil(self.population.max(1)).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.population == 0 || self.max_evaluations < self.population {
            return Err(SearchError::BudgetTooSmall { budget: self.max_evaluations, population: self.population });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub evaluation: usize,
    pub generation: usize,
    pub genome: PipelineGenome,
    /// CV score; failed fits are recorded as `None` and rank last.
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub evaluated: usize,
    pub best: f64,
    pub mean: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Converged,
    GenerationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: PipelineGenome,
    pub best_score: f64,
    pub evaluations: usize,
    pub log: Vec<EvalRecord>,
    pub generations: Vec<GenerationStats>,
    pub stop_reason: StopReason,
}

fn random_code(rng: &mut ChaCha8Rng) -> GenomeCode {
    GenomeCode(GENE_DOMAINS.map(|d| rng.random_range(0..d)))
}

fn rank(score: Option<f64>) -> f64 {
    score.unwrap_or(f64::NEG_INFINITY)
}

struct Evaluator<'a> {
    x: &'a Matrix,
    y: &'a Targets,
    splits: Vec<Vec<usize>>,
    seed: u64,
    cache: HashMap<GenomeCode, Option<f64>>,
    log: Vec<EvalRecord>,
    budget: usize,
}

impl Evaluator<'_> {
    fn remaining(&self) -> usize {
        self.budget - self.log.len()
    }

    /// Score every code, evaluating unseen ones in parallel while budget
    /// remains. Codes left unscored for lack of budget come back as `None`
    /// together with `false`.
    fn score_all(&mut self, codes: &[GenomeCode], generation: usize) -> Vec<(Option<f64>, bool)> {
        let mut fresh: Vec<GenomeCode> = Vec::new();
        for c in codes {
            if !self.cache.contains_key(c) && !fresh.contains(c) && fresh.len() < self.remaining() {
                fresh.push(*c);
            }
        }
        let task = self.y.task();
        let results: Vec<(PipelineGenome, std::result::Result<f64, String>)> = fresh
            .par_iter()
            .map(|c| {
                let g = c.decode(task);
                let s = evaluate_with_folds(&g, self.x, self.y, &self.splits, seeds::derive(self.seed, c.hash64()));
                (g, s.map(|s| s.score).map_err(|e| e.to_string()))
            })
            .collect();
        for (genome, outcome) in results {
            let (score, error) = match outcome {
                Ok(s) if s.is_finite() => (Some(s), None),
                Ok(s) => (None, Some(format!("non-finite score {s}"))),
                Err(e) => (None, Some(e)),
            };
            self.cache.insert(genome.code, score);
            self.log.push(EvalRecord { evaluation: self.log.len(), generation, genome, score, error });
        }
        codes
            .iter()
            .map(|c| match self.cache.get(c) {
                Some(s) => (*s, true),
                None => (None, false),
            })
            .collect()
    }
}

fn tournament(rng: &mut ChaCha8Rng, pop: &[GenomeCode], scores: &[f64]) -> GenomeCode {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..TOURNAMENT {
        let c = rng.random_range(0..pop.len());
        if scores[c] > scores[best] || (scores[c] == scores[best] && pop[c] < pop[best]) {
            best = c;
        }
    }
    pop[best]
}

fn best_of(log: &[EvalRecord]) -> Option<&EvalRecord> {
    // earliest evaluation wins ties
    log.iter().fold(None, |acc: Option<&EvalRecord>, r| match acc {
        Some(a) if rank(a.score) >= rank(r.score) => Some(a),
        _ => Some(r),
    })
}

fn prepare<'a>(x: &'a Matrix, y: &'a Targets, folds: usize, budget: usize, seed: u64) -> Result<Evaluator<'a>> {
    super::check_xy(x, y)?;
    let splits = cv_splits(y, folds, seed)?;
    Ok(Evaluator { x, y, splits, seed, cache: HashMap::new(), log: Vec::new(), budget })
}

fn finish(ev: Evaluator<'_>, generations: Vec<GenerationStats>, stop_reason: StopReason) -> Result<SearchResult> {
    let best = best_of(&ev.log).ok_or(SearchError::EmptyInput)?;
    if best.score.is_none() {
        return Err(SearchError::Numerical(format!(
            "no genome could be evaluated: {}",
            best.error.clone().unwrap_or_default()
        )));
    }
    Ok(SearchResult {
        best: best.genome.clone(),
        best_score: rank(best.score),
        evaluations: ev.log.len(),
        log: ev.log.clone(),
        generations,
        stop_reason,
    })
}

/// Generational GA over pipeline genomes. All genomes share one set of CV
/// folds; each genome's model randomness is seeded from its own code, so
/// the log does not depend on the worker count.
pub fn evolve_pipelines(x: &Matrix, y: &Targets, budget: SearchBudget, folds: usize, seed: u64) -> Result<SearchResult> {
    budget.validate()?;
    let mut ev = prepare(x, y, folds, budget.max_evaluations, seed)?;
    let mut rng = seeds::rng(seeds::derive_named(seed, "ga"));
    let mut pop: Vec<GenomeCode> = (0..budget.population).map(|_| random_code(&mut rng)).collect();
    let mut stats: Vec<GenerationStats> = Vec::new();
    let mut best_so_far = f64::NEG_INFINITY;
    let mut stagnant = 0;
    let cap = budget.generation_cap();
    let mut stop = StopReason::GenerationCap;
    for generation in 0..cap {
        let before = ev.log.len();
        let scored = ev.score_all(&pop, generation);
        // genomes the budget could not cover do not take part in selection
        let (pop_eval, scores): (Vec<GenomeCode>, Vec<f64>) =
            pop.iter().zip(&scored).filter(|(_, s)| s.1).map(|(c, s)| (*c, rank(s.0))).unzip();
        let finite: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
        let gen_best = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let improved = gen_best > best_so_far;
        if improved {
            best_so_far = gen_best;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        stats.push(GenerationStats {
            generation,
            evaluated: ev.log.len() - before,
            best: gen_best,
            mean: if finite.is_empty() { f64::NEG_INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 },
            best_so_far,
        });
        if ev.remaining() == 0 {
            stop = StopReason::Budget;
            break;
        }
        if stagnant >= STAGNATION_LIMIT {
            stop = StopReason::Converged;
            break;
        }
        if generation + 1 == cap {
            break;
        }
        let elite = (0..pop_eval.len())
            .fold(0, |b, i| if scores[i] > scores[b] || (scores[i] == scores[b] && pop_eval[i] < pop_eval[b]) { i } else { b });
        let mut next = vec![pop_eval[elite]];
        while next.len() < budget.population {
            let mut a = tournament(&mut rng, &pop_eval, &scores);
            let mut b = tournament(&mut rng, &pop_eval, &scores);
            if rng.random::<f64>() < CROSSOVER_RATE {
                let point = rng.random_range(1..GENE_DOMAINS.len());
                for g in point..GENE_DOMAINS.len() {
                    std::mem::swap(&mut a.0[g], &mut b.0[g]);
                }
            }
            for child in [&mut a, &mut b] {
                for (g, d) in GENE_DOMAINS.iter().enumerate() {
                    if rng.random::<f64>() < MUTATION_RATE {
                        child.0[g] = rng.random_range(0..*d);
                    }
                }
            }
            next.push(a);
            if next.len() < budget.population {
                next.push(b);
            }
        }
        pop = next;
    }
    finish(ev, stats, stop)
}

/// Baseline: independent uniform genomes under the same evaluation budget.
pub fn random_search(x: &Matrix, y: &Targets, max_evaluations: usize, folds: usize, seed: u64) -> Result<SearchResult> {
    if max_evaluations == 0 {
        return Err(SearchError::BudgetTooSmall { budget: 0, population: 1 });
    }
    let mut ev = prepare(x, y, folds, max_evaluations, seed)?;
    let mut rng = seeds::rng(seeds::derive_named(seed, "random-search"));
    let space: usize = GENE_DOMAINS.iter().map(|&d| d as usize).product();
    let draws: Vec<GenomeCode> = (0..max_evaluations).map(|_| random_code(&mut rng)).collect();
    ev.score_all(&draws, 0);
    let stop = if ev.log.len() == max_evaluations.min(space) { StopReason::Budget } else { StopReason::GenerationCap };
    let scores: Vec<f64> = ev.log.iter().filter_map(|r| r.score).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stats = vec![GenerationStats {
        generation: 0,
        evaluated: ev.log.len(),
        best,
        mean: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
        best_so_far: best,
    }];
    finish(ev, stats, stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(seed: u64) -> (Matrix, Targets) {
        let mut rng = seeds::rng(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            // only the first two features carry signal
            let mut row: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            row[0] += c as f64 * 1.2;
            row[1] -= c as f64 * 1.2;
            x.push(row);
            y.push(c);
        }
        (x, Targets::Classes(y))
    }

    #[test]
    fn single_evaluation_budget() {
        let (x, y) = fixture(1);
        let r = evolve_pipelines(&x, &y, SearchBudget::new(1, 1), 5, 3).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.best, r.log[0].genome);
    }

    #[test]
    fn budget_below_population_is_rejected() {
        let (x, y) = fixture(1);
        assert!(matches!(
            evolve_pipelines(&x, &y, SearchBudget::new(5, 10), 5, 3),
            Err(SearchError::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn ledger_and_monotone_best() {
        let (x, y) = fixture(2);
        let r = evolve_pipelines(&x, &y, SearchBudget::new(60, 12), 5, 11).unwrap();
        assert!(r.log.len() <= 60);
        for w in r.generations.windows(2) {
            assert!(w[1].best_so_far >= w[0].best_so_far);
        }
        let mut codes: Vec<GenomeCode> = r.log.iter().map(|e| e.genome.code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), r.log.len(), "cache hits must not be re-evaluated");
        assert_eq!(r, evolve_pipelines(&x, &y, SearchBudget::new(60, 12), 5, 11).unwrap());
    }

    #[test]
    fn worker_count_does_not_change_log() {
        let (x, y) = fixture(3);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| evolve_pipelines(&x, &y, SearchBudget::new(30, 10), 5, 5).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
