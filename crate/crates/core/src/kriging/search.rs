//! Bound-constrained compass search used for hyperparameter fitting.

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// Objective value after every accepted move, starting with the initial point.
    pub history: Vec<f64>,
}

/// Minimises `f` over the box `[lo, hi]` by polling `±step` along each
/// coordinate, accepting only strict decreases and halving the step after an
/// unsuccessful sweep. Non-finite objective values count as failures.
pub fn compass_search<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: SearchOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut x: Vec<f64> = x0
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &h))| v.clamp(l, h))
        .collect();
    let sanitize = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let mut fx = sanitize(f(&x));
    let mut evals = 1;
    let mut history = vec![fx];
    let mut step = opts.initial_step;
    while step >= opts.min_step && evals < opts.max_evals {
        let mut improved = false;
        'coords: for d in 0..n {
            for dir in [1.0, -1.0] {
                if evals >= opts.max_evals {
                    break 'coords;
                }
                let cand = (x[d] + dir * step).clamp(lo[d], hi[d]);
                if cand == x[d] {
                    continue;
                }
                let old = x[d];
                x[d] = cand;
                let fc = sanitize(f(&x));
                evals += 1;
                if fc < fx {
                    fx = fc;
                    history.push(fx);
                    improved = true;
                    break;
                }
                x[d] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    SearchResult {
        x,
        value: fx,
        evals,
        history,
    }
}
