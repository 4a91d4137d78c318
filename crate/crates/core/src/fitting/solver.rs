use serde::{Deserialize, Serialize};

use super::energy::{energy, evaluate, Model, Targets};
use crate::error::Result;
use crate::skeleton::{PoseParams, NUM_DOF};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Scale each gradient component by the inverse Gauss-Newton curvature
    /// of its DOF.
    pub precondition: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            gradient_tolerance: 1e-6,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            precondition: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Line search found no decrease; the best iterate so far is returned.
    pub stalled: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub gradient_norm: f64,
    /// Energy after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

fn total_or_inf(theta: &PoseParams, targets: &Targets, m: &Model) -> f64 {
    energy(theta, targets, m).map(|b| b.total).unwrap_or(f64::INFINITY)
}

/// Gradient descent with backtracking line search over the DOF marked in
/// `active`.
pub fn minimize(
    theta0: &PoseParams,
    targets: &Targets,
    model: &Model,
    active: &[bool; NUM_DOF],
    opts: &SolverOptions,
) -> Result<(PoseParams, SolveReport)> {
    let mut theta = *theta0;
    let mut ev = evaluate(&theta, targets, model)?;
    let mut report = SolveReport {
        initial_energy: ev.breakdown.total,
        final_energy: ev.breakdown.total,
        trace: vec![ev.breakdown.total],
        ..SolveReport::default()
    };
    for it in 0..opts.max_iterations {
        let g: Vec<f64> = (0..NUM_DOF).map(|d| if active[d] { ev.gradient[d] } else { 0.0 }).collect();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        report.gradient_norm = gnorm;
        if gnorm < opts.gradient_tolerance {
            report.converged = true;
            break;
        }
        let hmax = ev.curvature.iter().cloned().fold(0.0, f64::max);
        let damping = 1e-12 + 1e-6 * hmax;
        let dir: Vec<f64> = (0..NUM_DOF)
            .map(|d| {
                if !active[d] {
                    0.0
                } else if opts.precondition {
                    -g[d] / (ev.curvature[d] + damping)
                } else {
                    -g[d]
                }
            })
            .collect();
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let e0 = ev.breakdown.total;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut cand = theta;
            for d in 0..NUM_DOF {
                cand.0[d] += alpha * dir[d];
            }
            let e = total_or_inf(&cand, targets, model);
            if e <= e0 + opts.armijo_c * alpha * slope {
                accepted = Some(cand);
                break;
            }
            alpha *= opts.shrink;
        }
        match accepted {
            Some(cand) => {
                theta = cand;
                ev = evaluate(&theta, targets, model)?;
                report.iterations = it + 1;
                report.trace.push(ev.breakdown.total);
            }
            None => {
                report.stalled = true;
                break;
            }
        }
    }
    if !report.converged {
        let g = (0..NUM_DOF)
            .filter(|d| active[*d])
            .map(|d| ev.gradient[d].powi(2))
            .sum::<f64>()
            .sqrt();
        report.gradient_norm = g;
        report.converged = g < opts.gradient_tolerance;
    }
    report.final_energy = ev.breakdown.total;
    Ok((theta, report))
}

pub const ALL_DOF: [bool; NUM_DOF] = [true; NUM_DOF];

/// Root rotation and local angles.
pub fn rotation_dof() -> [bool; NUM_DOF] {
    let mut a = [true; NUM_DOF];
    a[..3].fill(false);
    a
}

/// Root translation and rotation.
pub fn global_dof() -> [bool; NUM_DOF] {
    let mut a = [false; NUM_DOF];
    a[..crate::skeleton::GLOBAL_DOF].fill(true);
    a
}
