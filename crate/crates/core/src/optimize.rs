//! Derivative-free minimization (Nelder–Mead simplex).
//!
//! Used where moment objectives are cheap but not smooth enough to trust
//! finite-difference gradients, and as an independent cross-check on
//! closed-form solvers in the test suites.

/// Options for [`nelder_mead`].
#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Converged when the simplex value spread falls below
    /// `tolerance * (|best| + tolerance)` and the vertex spread below
    /// `tolerance` per coordinate.
    pub tolerance: f64,
    /// Relative size of the initial simplex around the start point.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iter: 5000, tolerance: 1e-12, initial_step: 0.1 }
    }
}

/// Result of a simplex search.
#[derive(Clone, Debug)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f` from `start` with the standard reflection/expansion/
/// contraction/shrink moves (coefficients 1, 2, 0.5, 0.5).
pub fn nelder_mead<F>(f: F, start: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    assert!(n > 0, "cannot optimize over zero dimensions");
    let (alpha, gamma, beta, sigma) = (1.0, 2.0, 0.5, 0.5);

    // simplex: start plus one vertex displaced along each coordinate
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        let step = opts.initial_step * v[i].abs().max(1.0);
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;

        // order the simplex by value
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let value_spread = values[worst] - values[best];
        let scale = values[best].abs() + opts.tolerance;
        let point_spread = (0..n)
            .map(|i| {
                simplex
                    .iter()
                    .map(|v| v[i])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    })
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0f64, f64::max);
        if value_spread <= opts.tolerance * scale && point_spread <= opts.tolerance.sqrt() {
            converged = true;
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; n];
        for (idx, v) in simplex.iter().enumerate() {
            if idx == worst {
                continue;
            }
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }

        let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            (0..n).map(|i| a[i] + t * (b[i] - a[i])).collect()
        };

        // reflect the worst vertex through the centroid
        let reflected = blend(&centroid, &simplex[worst], -alpha);
        let fr = f(&reflected);
        if fr < values[best] {
            // try to expand further along the same direction
            let expanded = blend(&centroid, &simplex[worst], -gamma);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
            continue;
        }
        // contract toward the better of worst/reflected
        let (base, fb) = if fr < values[worst] {
            (reflected.clone(), fr)
        } else {
            (simplex[worst].clone(), values[worst])
        };
        let contracted = blend(&centroid, &base, beta);
        let fc = f(&contracted);
        if fc < fb {
            simplex[worst] = contracted;
            values[worst] = fc;
            continue;
        }
        // shrink everything toward the best vertex
        let anchor = simplex[best].clone();
        for (idx, v) in simplex.iter_mut().enumerate() {
            if idx == best {
                continue;
            }
            *v = blend(&anchor, v, sigma);
            values[idx] = f(v);
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    Minimum {
        point: simplex.swap_remove(best),
        value: values[best],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let m = nelder_mead(f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.point[0] - 3.0).abs() < 1e-6, "{:?}", m.point);
        assert!((m.point[1] + 1.0).abs() < 1e-6, "{:?}", m.point);
    }

    #[test]
    fn rosenbrock_valley() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.point[0] - 1.0).abs() < 1e-3, "{:?}", m.point);
        assert!((m.point[1] - 1.0).abs() < 1e-3, "{:?}", m.point);
    }

    #[test]
    fn reports_non_convergence() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let m = nelder_mead(
            f,
            &[100.0, -50.0, 30.0],
            &NelderMeadOptions { max_iter: 3, ..Default::default() },
        );
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }
}
