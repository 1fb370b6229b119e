//! Bounded Nelder-Mead simplex search with Latin-hypercube multi-starts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Closed box `[lower, upper]` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bound vectors differ in length");
        Bounds { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(xi, (lo, hi))| *xi >= *lo && *xi <= *hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    /// Converged when max |f_i - f_best| over the simplex drops below this.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Initial edge length as a fraction of each coordinate's range.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            f_tol: 1e-8,
            max_iter: 5000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` inside `bounds`. Trial points are projected onto
/// the box before evaluation; non-finite objective values are treated as
/// +inf so the simplex moves away from them.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &SimplexOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(n, bounds.dim());
    let mut evaluations = 0usize;
    let mut eval = |x: &mut Vec<f64>| {
        bounds.project(x);
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&mut start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let range = bounds.upper[i] - bounds.lower[i];
        let mut step = opts.initial_step * if range > 0.0 { range } else { 1.0 };
        // Step inward when the start sits on the upper bound.
        if start[i] + step > bounds.upper[i] {
            step = -step;
        }
        let mut x = start.clone();
        x[i] += step;
        let fx = eval(&mut x);
        simplex.push((x, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && (worst - best).abs() <= opts.f_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let mut xr = along(alpha);
        let fr = eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = along(gamma);
            let fe = eval(&mut xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let mut x = along(rho * alpha);
            let fx = eval(&mut x);
            (x, fx)
        } else {
            let mut x = along(-rho);
            let fx = eval(&mut x);
            (x, fx)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        // Shrink towards the best vertex.
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = x_best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + sigma * (v - b))
                .collect();
            let fx = eval(&mut x);
            *vertex = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum {
        x,
        f: fx,
        iterations,
        evaluations,
        converged,
    }
}

/// `m` Latin-hypercube points in `bounds`: each coordinate's range is cut
/// into `m` equal strata and every stratum is used exactly once.
pub fn latin_hypercube(bounds: &Bounds, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; m];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(rng);
        let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
        for (p, s) in points.iter_mut().zip(strata) {
            let u: f64 = rng.gen();
            p[j] = lo + (hi - lo) * (s as f64 + u) / m as f64;
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStartSummary {
    pub restarts: usize,
    pub iterations: usize,
    pub evaluations: usize,
    /// Whether the winning start met the tolerance.
    pub converged: bool,
}

/// Runs the simplex from `starts` Latin-hypercube points (plus any
/// `extra` caller-supplied points) and keeps the best result. Ties keep the
/// earliest start, so the outcome is a pure function of the seed.
pub fn multi_start<F>(
    f: F,
    bounds: &Bounds,
    starts: usize,
    extra: &[Vec<f64>],
    seed: u64,
    opts: &SimplexOptions,
) -> (Minimum, MultiStartSummary)
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = latin_hypercube(bounds, starts, &mut rng);
    points.extend(extra.iter().cloned());
    let mut best: Option<Minimum> = None;
    let mut summary = MultiStartSummary {
        restarts: points.len(),
        iterations: 0,
        evaluations: 0,
        converged: false,
    };
    for p in &points {
        let m = nelder_mead(&f, p, bounds, opts);
        summary.iterations += m.iterations;
        summary.evaluations += m.evaluations;
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    summary.converged = best.converged;
    (best, summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let b = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]);
        let opts = SimplexOptions {
            f_tol: 1e-14,
            ..Default::default()
        };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &b, &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let b = Bounds::new(vec![0.5, 0.0], vec![2.0, 2.0]);
        let m = nelder_mead(|x| x[0] * x[0] + (x[1] - 1.0).powi(2), &[1.5, 1.5], &b, &Default::default());
        assert!(b.contains(&m.x));
        assert!((m.x[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn latin_hypercube_hits_each_stratum_once() {
        let b = Bounds::new(vec![0.0, 10.0], vec![1.0, 20.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(&b, 16, &mut rng);
        for j in 0..2 {
            let mut seen = [false; 16];
            for p in &pts {
                let s = ((p[j] - b.lower[j]) / (b.upper[j] - b.lower[j]) * 16.0).floor() as usize;
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
    }

    #[test]
    fn multi_start_is_deterministic_and_escapes_local_minima() {
        // Double well with the deeper minimum near x = -1.
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + 0.3 * x[0];
        let b = Bounds::new(vec![-2.0], vec![2.0]);
        let (m1, s1) = multi_start(f, &b, 8, &[], 11, &Default::default());
        let (m2, _) = multi_start(f, &b, 8, &[], 11, &Default::default());
        assert_eq!(m1, m2);
        assert!(m1.x[0] < 0.0);
        assert_eq!(s1.restarts, 8);
    }
}
