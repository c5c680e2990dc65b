//! Derivative-free minimization (Nelder–Mead with dimension-adaptive coefficients).

/// Stopping rules and limits.
#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    /// Relative spread of objective values across the simplex.
    pub ftol: f64,
    /// Simplex size, measured per coordinate relative to `max(1, |x|)`.
    pub xtol: f64,
    pub max_evals: usize,
    /// Restarts from the best vertex after a converged run.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-10,
            xtol: 1e-8,
            max_evals: 40_000,
            restarts: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` from `x0`. `steps` gives the initial simplex edge per coordinate. Points where
/// `f` is `+∞` or NaN are treated as rejected.
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len());
    let mut counter = Counter { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut total_iter = 0;
    let mut result = run(&mut counter, &x, steps, opts, &mut total_iter);
    for _ in 0..opts.restarts {
        if !result.converged || counter.evals >= opts.max_evals {
            break;
        }
        x.clone_from(&result.x);
        let again = run(&mut counter, &x, steps, opts, &mut total_iter);
        let improved = result.f - again.f > opts.ftol * (result.f.abs() + 1e-30);
        let prev = result.f;
        if again.f <= result.f {
            result = again;
        }
        if !improved {
            result.converged = result.converged && result.f <= prev;
            break;
        }
    }
    result.iterations = total_iter;
    result.evaluations = counter.evals;
    result
}

fn run<F: FnMut(&[f64]) -> f64>(
    counter: &mut Counter<F>,
    x0: &[f64],
    steps: &[f64],
    opts: &NelderMeadOptions,
    iterations: &mut usize,
) -> Minimum {
    let n = x0.len();
    let nf = n.max(1) as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let shrink = if n > 1 { 1.0 - 1.0 / nf } else { 0.5 };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| counter.call(v)).collect();
    // Rejected initial vertices are pulled toward x0 until feasible.
    for i in 1..=n {
        let mut tries = 0;
        while fvals[i].is_infinite() && tries < 30 {
            for (vj, xj) in simplex[i].iter_mut().zip(x0) {
                *vj = xj + 0.5 * (*vj - xj);
            }
            fvals[i] = counter.call(&simplex[i]);
            tries += 1;
        }
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    while counter.evals < opts.max_evals {
        order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]).then(a.cmp(&b)));
        let (best, worst, second) = (order[0], order[n], order[n.saturating_sub(1)]);
        if stopped(&simplex, &fvals, best, opts) {
            converged = true;
            break;
        }
        *iterations += 1;
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / nf;
            }
        }
        let point = |coef: f64, out: &mut Vec<f64>, w: &[f64]| {
            for ((o, c), wv) in out.iter_mut().zip(&centroid).zip(w) {
                *o = c + coef * (c - wv);
            }
        };
        point(alpha, &mut trial, &simplex[worst]);
        let fr = counter.call(&trial);
        if fr < fvals[best] {
            point(alpha * gamma, &mut trial2, &simplex[worst]);
            let fe = counter.call(&trial2);
            if fe < fr {
                simplex[worst].clone_from(&trial2);
                fvals[worst] = fe;
            } else {
                simplex[worst].clone_from(&trial);
                fvals[worst] = fr;
            }
            continue;
        }
        if fr < fvals[second] {
            simplex[worst].clone_from(&trial);
            fvals[worst] = fr;
            continue;
        }
        let outside = fr < fvals[worst];
        let coef = if outside { alpha * rho } else { -rho };
        point(coef, &mut trial2, &simplex[worst]);
        let fc = counter.call(&trial2);
        let accept = if outside { fc <= fr } else { fc < fvals[worst] };
        if accept {
            simplex[worst].clone_from(&trial2);
            fvals[worst] = fc;
            continue;
        }
        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for (v, a) in simplex[i].iter_mut().zip(&anchor) {
                *v = a + shrink * (*v - a);
            }
            fvals[i] = counter.call(&simplex[i]);
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| fvals[a].total_cmp(&fvals[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        f: fvals[best],
        converged,
        iterations: 0,
        evaluations: 0,
    }
}

fn stopped(simplex: &[Vec<f64>], fvals: &[f64], best: usize, opts: &NelderMeadOptions) -> bool {
    let fb = fvals[best];
    if !fb.is_finite() {
        return false;
    }
    let f_spread = fvals.iter().map(|f| (f - fb).abs()).fold(0.0, f64::max);
    if !(f_spread <= opts.ftol * fb.abs().max(1e-300)) && f_spread > 0.0 {
        return false;
    }
    let xb = &simplex[best];
    simplex.iter().all(|v| {
        v.iter()
            .zip(xb)
            .all(|(a, b)| (a - b).abs() <= opts.xtol * b.abs().max(1.0))
    })
}

/// Central finite-difference gradient with step `rel·max(1, |x_j|)`; infinite entries mark
/// coordinates where a step left the feasible region.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], rel: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = rel * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let a = f(&xp);
            xp[j] = x[j] - h;
            let b = f(&xp);
            xp[j] = x[j];
            (a - b) / (2.0 * h)
        })
        .collect()
}
