//! Accelerated projected gradient over the capped simplex.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::projection::project_capped_simplex;

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// `|| w - P(w - grad / L) ||_2` at the returned point, in weight units.
    pub final_gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial Lipschitz estimate of the gradient.
    pub lipschitz: f64,
    /// Lets the step grow between iterations; needed when `lipschitz` is only a guess.
    pub adaptive: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
            lipschitz: 1.0,
            adaptive: false,
        }
    }
}

fn residual(x: &DVector<f64>, grad: &DVector<f64>, lipschitz: f64) -> f64 {
    (x - project_capped_simplex(&(x - grad / lipschitz))).norm()
}

/// Minimizes a smooth `f` over the capped simplex starting from `x0`.
///
/// FISTA with backtracking and function-value restarts; a rejected momentum
/// step falls back to a plain projected-gradient step, so objective values are
/// monotone. `f` returns the value and gradient at a point.
pub fn minimize<F>(f: F, x0: &DVector<f64>, opts: SolverOptions) -> (DVector<f64>, SolverReport)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut lipschitz = opts.lipschitz.max(1e-12);
    let mut x = project_capped_simplex(x0);
    let (mut fx, mut gx) = f(&x);
    let mut res = residual(&x, &gx, lipschitz);
    if res <= opts.tolerance {
        return (
            x,
            SolverReport {
                iterations: 0,
                final_gradient_norm: res,
                converged: true,
            },
        );
    }
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut iterations = 0;
    for iteration in 1..=opts.max_iterations {
        iterations = iteration;
        if opts.adaptive {
            lipschitz = (lipschitz * 0.5).max(1e-12);
        }
        let (fy, gy) = if momentum == 1.0 { (fx, gx.clone()) } else { f(&y) };
        let (z, fz) = loop {
            let z = project_capped_simplex(&(&y - &gy / lipschitz));
            let step = &z - &y;
            let (fz, _) = f(&z);
            let bound = fy + gy.dot(&step) + 0.5 * lipschitz * step.norm_squared();
            if fz <= bound + 1e-15 * fy.abs().max(1.0) || lipschitz > 1e300 {
                break (z, fz);
            }
            lipschitz *= 2.0;
        };
        if fz > fx && momentum != 1.0 {
            // Momentum overshot: restart from the current iterate.
            momentum = 1.0;
            y = x.clone();
            continue;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let improved = fz <= fx;
        if improved {
            y = &z + (&z - &x) * ((momentum - 1.0) / next);
            x = z;
            let (fnew, gnew) = f(&x);
            fx = fnew;
            gx = gnew;
            momentum = next;
        } else {
            momentum = 1.0;
            y = x.clone();
        }
        res = residual(&x, &gx, lipschitz);
        if res <= opts.tolerance {
            return (
                x,
                SolverReport {
                    iterations: iteration,
                    final_gradient_norm: res,
                    converged: true,
                },
            );
        }
        if !improved && !opts.adaptive {
            // A plain step from x that cannot decrease f means x is stationary up to round-off.
            break;
        }
    }
    (
        x,
        SolverReport {
            iterations,
            final_gradient_norm: res,
            converged: false,
        },
    )
}
