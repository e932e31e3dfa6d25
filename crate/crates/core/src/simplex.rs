//! Derivative-free Nelder-Mead simplex minimizer.

#[derive(Clone, Debug)]
pub(crate) struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SimplexOptions {
    pub initial_step: f64,
    pub max_iterations: usize,
    /// Relative spread of objective values across the simplex at which a pass stops.
    pub ftol: f64,
}

/// Minimizes `f` starting from `x0`, restarting from the incumbent after each
/// converged pass until a restart no longer improves the value. Non-finite
/// objective values are treated as +inf.
pub(crate) fn minimize<F>(f: F, x0: &[f64], opts: SimplexOptions) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best_x = x0.to_vec();
    let mut best = eval(x0);
    let mut used = 0;
    loop {
        let pass = single_pass(&eval, &best_x, best, opts, opts.max_iterations - used);
        used += pass.iterations;
        let improved =
            pass.value < best && (best.is_infinite() || best - pass.value > opts.ftol * best.abs());
        if pass.value <= best {
            best = pass.value;
            best_x = pass.x;
        }
        if !pass.converged {
            return SimplexResult {
                x: best_x,
                value: best,
                iterations: used,
                converged: false,
            };
        }
        if !improved || used >= opts.max_iterations || best == 0.0 {
            return SimplexResult {
                x: best_x,
                value: best,
                iterations: used,
                converged: true,
            };
        }
    }
}

fn single_pass<F>(
    eval: &F,
    x0: &[f64],
    f0: f64,
    opts: SimplexOptions,
    budget: usize,
) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;
    // Vertices this close together no longer change the objective meaningfully.
    const X_TOL: f64 = 1e-12;

    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let width = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if worst - best <= opts.ftol * best.abs() || width <= X_TOL {
            return SimplexResult {
                x: simplex[0].0.clone(),
                value: best,
                iterations,
                converged: true,
            };
        }
        if iterations >= budget {
            return SimplexResult {
                x: simplex[0].0.clone(),
                value: best,
                iterations,
                converged: false,
            };
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

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&x_best) {
                *xi = bi + SHRINK * (*xi - bi);
            }
            *v = eval(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let opts = SimplexOptions {
            initial_step: 0.5,
            max_iterations: 2000,
            ftol: 1e-14,
        };
        let r = minimize(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + 1.0,
            &[0.0, 0.0],
            opts,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!((r.x[1] + 2.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn rosenbrock_never_worse_than_start() {
        let opts = SimplexOptions {
            initial_step: 0.1,
            max_iterations: 50,
            ftol: 1e-12,
        };
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], opts);
        assert!(r.value <= f(&[-1.2, 1.0]));
        assert!(r.iterations <= 50);
    }
}
