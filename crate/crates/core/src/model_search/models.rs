//! Pipeline building blocks: scalers, feature reducers and a small model zoo
//! (k-nearest neighbors, L2 logistic / ridge, CART trees, random forests).

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SearchError, Targets, Task};
use crate::seeds;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerGene {
    None,
    Standardize,
    Minmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerGene {
    None,
    TopVariance { d: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelGene {
    Knn { k: usize },
    Logistic { lambda: f64 },
    Ridge { lambda: f64 },
    Tree { depth: usize },
    Forest { trees: usize, depth: usize },
}

pub const SCALERS: [ScalerGene; 3] = [ScalerGene::None, ScalerGene::Standardize, ScalerGene::Minmax];
pub const REDUCERS: [ReducerGene; 4] = [
    ReducerGene::None,
    ReducerGene::TopVariance { d: 8 },
    ReducerGene::TopVariance { d: 16 },
    ReducerGene::TopVariance { d: 32 },
];
const LAMBDAS: [f64; 3] = [0.01, 0.1, 1.0];
const KNN_K: [usize; 3] = [1, 3, 5];
const TREE_DEPTHS: [usize; 3] = [2, 3, 5];
const FOREST: [(usize, usize); 4] = [(25, 3), (25, 5), (100, 3), (100, 5)];
pub const MODEL_DOMAIN: usize = 13;
pub const SEED_DOMAIN: u8 = 4;

/// Model gene `i` of the task's finite domain.
pub fn model_gene(task: Task, i: usize) -> ModelGene {
    match i {
        0..=2 => ModelGene::Knn { k: KNN_K[i] },
        3..=5 => match task {
            Task::Classification => ModelGene::Logistic { lambda: LAMBDAS[i - 3] },
            Task::Regression => ModelGene::Ridge { lambda: LAMBDAS[i - 3] },
        },
        6..=8 => ModelGene::Tree { depth: TREE_DEPTHS[i - 6] },
        _ => {
            let (trees, depth) = FOREST[i - 9];
            ModelGene::Forest { trees, depth }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scaler {
    Identity,
    Affine { shift: Vec<f64>, scale: Vec<f64> },
}

impl Scaler {
    /// Statistics come from `x` alone (the training fold).
    pub fn fit(gene: ScalerGene, x: &Matrix) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        match gene {
            ScalerGene::None => Scaler::Identity,
            ScalerGene::Standardize => {
                let mut shift = vec![0.0; d];
                let mut scale = vec![0.0; d];
                for j in 0..d {
                    let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
                    let var = x.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
                    shift[j] = mean;
                    scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
                }
                Scaler::Affine { shift, scale }
            }
            ScalerGene::Minmax => {
                let mut shift = vec![0.0; d];
                let mut scale = vec![0.0; d];
                for j in 0..d {
                    let lo = x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                    let hi = x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                    shift[j] = lo;
                    scale[j] = if hi > lo { hi - lo } else { 1.0 };
                }
                Scaler::Affine { shift, scale }
            }
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        match self {
            Scaler::Identity => x.clone(),
            Scaler::Affine { shift, scale } => x
                .iter()
                .map(|r| r.iter().zip(shift).zip(scale).map(|((v, s), c)| (v - s) / c).collect())
                .collect(),
        }
    }
}

/// Column indices kept by the reducer, ascending.
pub fn fit_reducer(gene: ReducerGene, x: &Matrix) -> Option<Vec<usize>> {
    let ReducerGene::TopVariance { d } = gene else {
        return None;
    };
    let dim = x.first().map_or(0, Vec::len);
    if d >= dim {
        return None;
    }
    let n = x.len() as f64;
    let var: Vec<f64> = (0..dim)
        .map(|j| {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
            x.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n
        })
        .collect();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let mut keep = order[..d].to_vec();
    keep.sort_unstable();
    Some(keep)
}

pub fn select_columns(x: &Matrix, cols: &Option<Vec<usize>>) -> Matrix {
    match cols {
        None => x.clone(),
        Some(c) => x.iter().map(|r| c.iter().map(|&j| r[j]).collect()).collect(),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn majority(labels: impl Iterator<Item = usize>, n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes.max(1)];
    for l in labels {
        counts[l] += 1;
    }
    // ties go to the lowest class id
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// CART tree. Leaf values hold a class id (classification) or a mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

struct TreeBuilder<'a, R: Rng> {
    x: &'a Matrix,
    y: &'a Targets,
    n_classes: usize,
    max_depth: usize,
    max_features: Option<usize>,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.y {
            Targets::Classes(c) => majority(idx.iter().map(|&i| c[i]), self.n_classes) as f64,
            Targets::Values(v) => idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64,
        }
    }

    fn impurity_of(&self, counts: &[f64], sum: f64, sum_sq: f64, n: f64) -> f64 {
        match self.y {
            Targets::Classes(_) => n * (1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()),
            Targets::Values(_) => sum_sq - sum * sum / n,
        }
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let dim = self.x[0].len();
        let features: Vec<usize> = match self.max_features {
            Some(f) if f < dim => {
                let mut s = sample(self.rng, dim, f).into_vec();
                s.sort_unstable();
                s
            }
            _ => (0..dim).collect(),
        };
        let n = idx.len() as f64;
        let stat = |i: usize| -> (usize, f64) {
            match self.y {
                Targets::Classes(c) => (c[i], 0.0),
                Targets::Values(v) => (0, v[i]),
            }
        };
        let k = self.n_classes.max(1);
        let mut total_counts = vec![0.0; k];
        let (mut tsum, mut tsq) = (0.0, 0.0);
        for &i in idx {
            let (c, v) = stat(i);
            if matches!(self.y, Targets::Classes(_)) {
                total_counts[c] += 1.0;
            }
            tsum += v;
            tsq += v * v;
        }
        let parent = self.impurity_of(&total_counts, tsum, tsq, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_counts = vec![0.0; k];
            let (mut lsum, mut lsq) = (0.0, 0.0);
            for pos in 0..order.len() - 1 {
                let (c, v) = stat(order[pos]);
                if matches!(self.y, Targets::Classes(_)) {
                    left_counts[c] += 1.0;
                }
                lsum += v;
                lsq += v * v;
                let a = self.x[order[pos]][f];
                let b = self.x[order[pos + 1]][f];
                if a == b {
                    continue;
                }
                let nl = (pos + 1) as f64;
                let nr = n - nl;
                let right_counts: Vec<f64> = total_counts.iter().zip(&left_counts).map(|(t, l)| t - l).collect();
                let imp = self.impurity_of(&left_counts, lsum, lsq, nl)
                    + self.impurity_of(&right_counts, tsum - lsum, tsq - lsq, nr);
                let gain = parent - imp;
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g + 1e-12) {
                    best = Some((f, a + (b - a) / 2.0, gain));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: self.leaf_value(idx) });
        if depth >= self.max_depth || idx.len() < 2 {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(&l, depth + 1);
        let right = self.build(&r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature, threshold, left, right };
        id
    }
}

impl Tree {
    pub fn fit<R: Rng>(x: &Matrix, y: &Targets, idx: &[usize], n_classes: usize, max_depth: usize, max_features: Option<usize>, rng: &mut R) -> Self {
        let mut b = TreeBuilder { x, y, n_classes, max_depth, max_features, rng, nodes: Vec::new() };
        b.build(idx, 0);
        Tree { nodes: b.nodes }
    }

    pub fn predict_one(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Multinomial logistic regression with an L2 penalty on the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    /// One row per class: bias followed by feature weights.
    pub weights: Vec<Vec<f64>>,
}

const LOGISTIC_ITERS: usize = 300;

impl Logistic {
    /// Full-batch gradient descent with step 1/L, where L bounds the
    /// curvature of the penalized mean cross-entropy.
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, lambda: f64) -> Self {
        let n = x.len();
        let d = x[0].len();
        let max_norm = x.iter().map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
        let step = 1.0 / (0.5 * max_norm + lambda);
        let mut w = vec![vec![0.0; d + 1]; n_classes];
        let mut probs = vec![0.0; n_classes];
        for _ in 0..LOGISTIC_ITERS {
            let mut grad = vec![vec![0.0; d + 1]; n_classes];
            for (row, &label) in x.iter().zip(y) {
                softmax_into(&w, row, &mut probs);
                for c in 0..n_classes {
                    let err = probs[c] - if c == label { 1.0 } else { 0.0 };
                    let g = &mut grad[c];
                    g[0] += err;
                    for (gj, v) in g[1..].iter_mut().zip(row) {
                        *gj += err * v;
                    }
                }
            }
            for (wc, gc) in w.iter_mut().zip(&grad) {
                wc[0] -= step * gc[0] / n as f64;
                for j in 1..=d {
                    wc[j] -= step * (gc[j] / n as f64 + lambda * wc[j]);
                }
            }
        }
        Logistic { weights: w }
    }

    pub fn predict_one(&self, row: &[f64]) -> usize {
        let mut probs = vec![0.0; self.weights.len()];
        softmax_into(&self.weights, row, &mut probs);
        let mut best = 0;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = c;
            }
        }
        best
    }
}

fn softmax_into(w: &[Vec<f64>], row: &[f64], out: &mut [f64]) {
    for (o, wc) in out.iter_mut().zip(w) {
        *o = wc[0] + wc[1..].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Ridge regression `min ||y − Xw − b||² + λ||w||²`, solved in the n × n
/// dual so wide feature matrices stay cheap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl Ridge {
    pub fn fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<Self> {
        let n = x.len();
        let d = x[0].len();
        let x_mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let xc: Matrix = x.iter().map(|r| r.iter().zip(&x_mean).map(|(a, m)| a - m).collect()).collect();
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = xc[i].iter().zip(&xc[j]).map(|(a, b)| a * b).sum();
                gram[i][j] = v;
                gram[j][i] = v;
            }
            gram[i][i] += lambda;
        }
        let alpha = cholesky_solve(gram, &yc).ok_or_else(|| SearchError::Numerical("ridge system not positive definite".into()))?;
        let mut weights = vec![0.0; d];
        for (a, row) in alpha.iter().zip(&xc) {
            for (w, v) in weights.iter_mut().zip(row) {
                *w += a * v;
            }
        }
        let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
        Ok(Ridge { weights, intercept })
    }

    pub fn predict_one(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn cholesky_solve(mut a: Vec<Vec<f64>>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let diag = a[j][j] - a[j][..j].iter().map(|v| v * v).sum::<f64>();
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let diag = diag.sqrt();
        a[j][j] = diag;
        for i in j + 1..n {
            let v = a[i][j] - a[i][..j].iter().zip(&a[j][..j]).map(|(p, q)| p * q).sum::<f64>();
            a[i][j] = v / diag;
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i][k] * z[k];
        }
        z[i] = v / a[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = z[i];
        for k in i + 1..n {
            v -= a[k][i] * x[k];
        }
        x[i] = v / a[i][i];
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Knn { k: usize, x: Matrix, y: Targets, n_classes: usize },
    Logistic(Logistic),
    Ridge(Ridge),
    Tree(Tree),
    Forest { trees: Vec<Tree>, n_classes: usize, task: Task },
}

impl FittedModel {
    pub fn fit(gene: ModelGene, x: &Matrix, y: &Targets, n_classes: usize, seed: u64) -> Result<Self> {
        let all: Vec<usize> = (0..x.len()).collect();
        Ok(match gene {
            ModelGene::Knn { k } => FittedModel::Knn { k: k.min(x.len()), x: x.clone(), y: y.clone(), n_classes },
            ModelGene::Logistic { lambda } => match y {
                Targets::Classes(c) => FittedModel::Logistic(Logistic::fit(x, c, n_classes, lambda)),
                Targets::Values(_) => return Err(SearchError::TaskMismatch),
            },
            ModelGene::Ridge { lambda } => match y {
                Targets::Values(v) => FittedModel::Ridge(Ridge::fit(x, v, lambda)?),
                Targets::Classes(_) => return Err(SearchError::TaskMismatch),
            },
            ModelGene::Tree { depth } => {
                let mut rng = seeds::rng(seed);
                FittedModel::Tree(Tree::fit(x, y, &all, n_classes, depth, None, &mut rng))
            }
            ModelGene::Forest { trees, depth } => {
                let mut rng = seeds::rng(seed);
                let dim = x[0].len();
                let max_features = ((dim as f64).sqrt().ceil() as usize).max(1);
                let n = x.len();
                let forest = (0..trees)
                    .map(|_| {
                        let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                        Tree::fit(x, y, &boot, n_classes, depth, Some(max_features), &mut rng)
                    })
                    .collect();
                let task = match y {
                    Targets::Classes(_) => Task::Classification,
                    Targets::Values(_) => Task::Regression,
                };
                FittedModel::Forest { trees: forest, n_classes, task }
            }
        })
    }

    /// Class id (as f64) or regression value for each row.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter().map(|row| self.predict_one(row)).collect()
    }

    fn predict_one(&self, row: &[f64]) -> f64 {
        match self {
            FittedModel::Knn { k, x, y, n_classes } => {
                let mut order: Vec<(f64, usize)> = x.iter().enumerate().map(|(i, r)| (sq_dist(r, row), i)).collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let near = &order[..*k];
                match y {
                    Targets::Values(v) => near.iter().map(|&(_, i)| v[i]).sum::<f64>() / near.len() as f64,
                    Targets::Classes(c) => {
                        let mut counts = vec![0usize; (*n_classes).max(1)];
                        for &(_, i) in near {
                            counts[c[i]] += 1;
                        }
                        let top = *counts.iter().max().expect("nonempty");
                        // ties go to the class of the nearest tied neighbor
                        near.iter().map(|&(_, i)| c[i]).find(|&l| counts[l] == top).expect("some neighbor") as f64
                    }
                }
            }
            FittedModel::Logistic(m) => m.predict_one(row) as f64,
            FittedModel::Ridge(m) => m.predict_one(row),
            FittedModel::Tree(t) => t.predict_one(row),
            FittedModel::Forest { trees, n_classes, task } => match task {
                Task::Regression => trees.iter().map(|t| t.predict_one(row)).sum::<f64>() / trees.len() as f64,
                Task::Classification => {
                    majority(trees.iter().map(|t| t.predict_one(row) as usize), *n_classes) as f64
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_uses_training_rows_only() {
        let x = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Scaler::fit(ScalerGene::Standardize, &x);
        let t = s.transform(&vec![vec![2.0, 6.0]]);
        assert_eq!(t, vec![vec![0.0, 1.0]]);
        let mm = Scaler::fit(ScalerGene::Minmax, &x);
        assert_eq!(mm.transform(&vec![vec![3.0, 5.0]]), vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn top_variance_picks_spread_columns() {
        let x = vec![vec![0.0, 1.0, 5.0], vec![0.0, 2.0, -5.0], vec![0.0, 3.0, 5.0]];
        assert_eq!(fit_reducer(ReducerGene::TopVariance { d: 2 }, &x), Some(vec![1, 2]));
        assert_eq!(fit_reducer(ReducerGene::TopVariance { d: 8 }, &x), None);
    }

    #[test]
    fn one_nn_memorizes() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = Targets::Classes(vec![1, 0, 1]);
        let m = FittedModel::fit(ModelGene::Knn { k: 1 }, &x, &y, 2, 0).unwrap();
        assert_eq!(m.predict(&x), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn ridge_shrinks_to_mean() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 3.0], vec![3.0, 1.0]];
        let y = [0.1, 0.3, 0.8, 0.4];
        let heavy = Ridge::fit(&x, &y, 1e12).unwrap();
        let mean = y.iter().sum::<f64>() / 4.0;
        for r in &x {
            assert!((heavy.predict_one(r) - mean).abs() < 1e-9);
        }
        let light = Ridge::fit(&x, &y, 1e-9).unwrap();
        // 4 points, 2 features + intercept: least squares on an exact line
        let xs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let exact = Ridge::fit(&xs, &[1.0, 3.0, 5.0], 1e-12).unwrap();
        assert!((exact.predict_one(&[4.0]) - 9.0).abs() < 1e-6);
        assert!(light.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn tree_splits_separable_data() {
        let x = vec![vec![0.0, 9.0], vec![0.1, 1.0], vec![0.9, 5.0], vec![1.0, 2.0]];
        let y = Targets::Classes(vec![0, 0, 1, 1]);
        let mut rng = seeds::rng(0);
        let t = Tree::fit(&x, &y, &[0, 1, 2, 3], 2, 2, None, &mut rng);
        assert_eq!(x.iter().map(|r| t.predict_one(r)).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(t.nodes[0], TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn regression_tree_means() {
        let x = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let y = Targets::Values(vec![1.0, 3.0, 10.0, 12.0]);
        let mut rng = seeds::rng(0);
        let t = Tree::fit(&x, &y, &[0, 1, 2, 3], 0, 1, None, &mut rng);
        assert_eq!(t.predict_one(&[0.5]), 2.0);
        assert_eq!(t.predict_one(&[10.5]), 11.0);
    }

    #[test]
    fn logistic_learns_threshold() {
        let x: Matrix = (0..20).map(|i| vec![i as f64 / 10.0 - 1.0]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let m = Logistic::fit(&x, &y, 2, 0.01);
        let pred: Vec<usize> = x.iter().map(|r| m.predict_one(r)).collect();
        let correct = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(correct >= 18, "{correct}");
    }

    #[test]
    fn forest_is_seeded() {
        let x: Matrix = (0..30).map(|i| vec![(i % 7) as f64, (i % 5) as f64, i as f64]).collect();
        let y = Targets::Values((0..30).map(|i| i as f64 / 30.0).collect());
        let a = FittedModel::fit(ModelGene::Forest { trees: 5, depth: 3 }, &x, &y, 0, 3).unwrap();
        let b = FittedModel::fit(ModelGene::Forest { trees: 5, depth: 3 }, &x, &y, 0, 3).unwrap();
        assert_eq!(a, b);
    }
}
