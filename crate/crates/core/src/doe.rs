//! Latin hypercube designs and nested high-fidelity subsets.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named box-bounded design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct DesignSpace {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawSpace> for DesignSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        DesignSpace::new(raw.names, raw.lower, raw.upper)
    }
}

impl DesignSpace {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyInput("design space has no variables"));
        }
        if names.len() != lower.len() || names.len() != upper.len() {
            return Err(Error::InvalidDomain("names and bounds differ in length".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidDomain(format!(
                    "variable {}: need finite lower < upper, got [{l}, {u}]",
                    names[i]
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidDomain(format!("duplicate variable name {dup}")));
        }
        Ok(DesignSpace { names, lower, upper })
    }

    /// The seven electrostatic-chuck variables `CR1, CR2, H1, H2, W1, W2, F1`.
    pub fn esc() -> Self {
        let names = ["CR1", "CR2", "H1", "H2", "W1", "W2", "F1"];
        DesignSpace {
            names: names.iter().map(|s| s.to_string()).collect(),
            lower: vec![0.01, 0.01, 5.0, 1.0, 5.0, 5.0, 0.0],
            upper: vec![0.1, 0.1, 19.5, 19.5, 8.0, 8.0, 10.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(i) = (0..x.len()).find(|&i| !(self.lower[i] <= x[i] && x[i] <= self.upper[i])) {
            return Err(Error::InvalidDomain(format!(
                "{} = {} outside [{}, {}]",
                self.names[i], x[i], self.lower[i], self.upper[i]
            )));
        }
        Ok(())
    }

    /// Maps `x` to the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / (self.upper[i] - self.lower[i]))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] + v * (self.upper[i] - self.lower[i]))
            .collect()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Stratified Latin hypercube sample: each of the `n` equal-width strata of
/// every dimension holds exactly one point, placed uniformly within it.
pub fn lhs(space: &DesignSpace, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lhs_with(space, n, &mut rng)
}

pub fn lhs_with<R: Rng>(space: &DesignSpace, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Size("LHS needs at least one sample".into()));
    }
    let dim = space.dim();
    let mut out = DMatrix::zeros(n, dim);
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        perm.shuffle(rng);
        let (lo, hi) = (space.lower[d], space.upper[d]);
        let width = (hi - lo) / n as f64;
        for (i, &s) in perm.iter().enumerate() {
            let r: f64 = rng.random();
            // stay inside the stratum despite rounding
            let v = lo + (s as f64 + r) * width;
            let top = lo + (s + 1) as f64 * width;
            out[(i, d)] = v.min(top.next_down()).clamp(lo, hi);
        }
    }
    Ok(out)
}

/// Index of the stratum that `v` falls in along dimension `d`.
pub fn stratum(space: &DesignSpace, d: usize, n: usize, v: f64) -> usize {
    let t = (v - space.lower[d]) / (space.upper[d] - space.lower[d]);
    ((t * n as f64).floor() as usize).min(n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetStrategy {
    #[default]
    FirstN,
    Maximin,
}

/// Picks `n_h` rows of `points` for high-fidelity evaluation. The result is
/// sorted ascending.
pub fn nested_subset(points: &DMatrix<f64>, n_h: usize, strategy: SubsetStrategy) -> Result<Vec<usize>> {
    let n = points.nrows();
    if n_h > n {
        return Err(Error::Size(format!("requested {n_h} of {n} points")));
    }
    match strategy {
        SubsetStrategy::FirstN => Ok((0..n_h).collect()),
        SubsetStrategy::Maximin => Ok(maximin(points, n_h)),
    }
}

fn dist2(points: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    points
        .row(a)
        .iter()
        .zip(points.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Smallest pairwise squared distance within `idx`.
pub fn min_pairwise_dist2(points: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, &a) in idx.iter().enumerate() {
        for &b in &idx[i + 1..] {
            best = best.min(dist2(points, a, b));
        }
    }
    best
}

/// Subsets up to this many candidates are searched exhaustively.
const EXACT_MAXIMIN_LIMIT: f64 = 50_000.0;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exhaustive search in lexicographic order; the first best subset wins.
fn maximin_exact(points: &DMatrix<f64>, n_h: usize) -> Vec<usize> {
    let n = points.nrows();
    let mut idx: Vec<usize> = (0..n_h).collect();
    let mut best = idx.clone();
    let mut best_score = min_pairwise_dist2(points, &idx);
    loop {
        let mut i = n_h;
        while i > 0 && idx[i - 1] == n - n_h + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for j in i..n_h {
            idx[j] = idx[j - 1] + 1;
        }
        let s = min_pairwise_dist2(points, &idx);
        if s > best_score {
            best_score = s;
            best.clone_from(&idx);
        }
    }
}

/// Greedy farthest-point selection seeded with the diameter pair, followed by
/// single-swap improvement of the minimum pairwise distance. Small instances
/// are solved exactly.
fn maximin(points: &DMatrix<f64>, n_h: usize) -> Vec<usize> {
    let n = points.nrows();
    if n_h == 0 {
        return Vec::new();
    }
    if n_h == 1 {
        return vec![0];
    }
    if binomial(n, n_h) <= EXACT_MAXIMIN_LIMIT {
        return maximin_exact(points, n_h);
    }
    let (mut a, mut b, mut far) = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist2(points, i, j);
            if d > far {
                (a, b, far) = (i, j, d);
            }
        }
    }
    let mut chosen = vec![a, b];
    let mut in_set = vec![false; n];
    in_set[a] = true;
    in_set[b] = true;
    let mut near: Vec<f64> = (0..n).map(|i| dist2(points, i, a).min(dist2(points, i, b))).collect();
    while chosen.len() < n_h {
        let mut pick = usize::MAX;
        for i in 0..n {
            if !in_set[i] && (pick == usize::MAX || near[i] > near[pick]) {
                pick = i;
            }
        }
        chosen.push(pick);
        in_set[pick] = true;
        for i in 0..n {
            near[i] = near[i].min(dist2(points, i, pick));
        }
    }
    let mut score = min_pairwise_dist2(points, &chosen);
    let mut improved = true;
    let mut sweeps = 0;
    while improved && sweeps < 50 {
        improved = false;
        sweeps += 1;
        for slot in 0..chosen.len() {
            for cand in 0..n {
                if in_set[cand] {
                    continue;
                }
                let old = chosen[slot];
                chosen[slot] = cand;
                let s = min_pairwise_dist2(points, &chosen);
                if s > score {
                    score = s;
                    in_set[old] = false;
                    in_set[cand] = true;
                    improved = true;
                } else {
                    chosen[slot] = old;
                }
            }
        }
    }
    chosen.sort_unstable();
    chosen
}
