//! Downhill simplex on the unit box.

use serde::{Deserialize, Serialize};

/// Outcome of a simplex minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub initial_step: f64,
    /// Stop when `f_worst - f_best <= rel_tol · |f_best|`.
    pub rel_tol: f64,
    /// Also stop when every vertex lies within this distance of the best.
    pub x_tol: f64,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            rel_tol: 1e-10,
            x_tol: 1e-12,
            max_iterations: 20_000,
        }
    }
}

fn clamp01(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Nelder-Mead with standard coefficients. Every trial point is projected
/// onto `[0, 1]^n`, so the result always lies inside the box and is never
/// worse than `start`.
pub fn minimize(f: &mut dyn FnMut(&[f64]) -> f64, start: &[f64], opts: &SimplexOptions) -> Minimum {
    let n = start.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut x0 = start.to_vec();
    clamp01(&mut x0);
    pts.push(x0.clone());
    for i in 0..n {
        let mut p = x0.clone();
        p[i] += if p[i] + opts.initial_step <= 1.0 {
            opts.initial_step
        } else {
            -opts.initial_step
        };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
        pts = order.iter().map(|i| pts[*i].clone()).collect();
        vals = order.iter().map(|i| vals[*i]).collect();
        let (best, worst) = (vals[0], vals[n]);
        let spread = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if worst - best <= opts.rel_tol * best.abs() || spread <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (w - c)).collect();
            clamp01(&mut p);
            p
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let p = along(-0.5);
            let v = f(&p);
            (p, v)
        } else {
            let p = along(0.5);
            let v = f(&p);
            (p, v)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let mut p: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            clamp01(&mut p);
            vals[i] = f(&p);
            pts[i] = p;
        }
    }
    let best = (0..=n)
        .min_by(|a, b| vals[*a].total_cmp(&vals[*b]))
        .expect("non-empty simplex");
    Minimum {
        x: pts[best].clone(),
        value: vals[best],
        iterations,
        converged,
    }
}
