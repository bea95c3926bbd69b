//! Central finite-difference checks of reverse-mode gradients.
//!
//! The analytic side runs the forward pass in `f32` (or `f64` on request) and
//! calls [`Graph::backward`]; the numeric side re-evaluates the same forward
//! pass in `f64` with one coordinate nudged by ±h and never touches the
//! backward code.
//!
//! Deep composites accumulate `f32` rounding of order 1e-3 relative to their
//! largest gradient component and have enough curvature that h = 1e-3
//! truncation dominates; checking them with `analytic_f64` and a small step
//! isolates differentiation errors from precision effects.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// A scalar function of several tensors, expressible at any precision.
pub trait Objective {
    fn eval<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates checked per input; `None` checks all of them.
    pub max_coords_per_input: Option<usize>,
    /// Error floor as a fraction of the largest numeric gradient magnitude.
    pub relative_floor: f64,
    /// Runs the backward pass in `f64` instead of `f32`.
    pub analytic_f64: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_coords_per_input: None,
            relative_floor: 1e-3,
            analytic_f64: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
    pub worst: Option<Probe>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Scores a set of probes: each probe's error is floored at
/// `relative_floor · max|numeric|` so vanishing components do not divide by ~0.
pub fn score(probes: Vec<Probe>, relative_floor: f64) -> GradCheckReport {
    let scale = probes.iter().map(|p| p.numeric.abs()).fold(0.0, f64::max);
    let floor = (relative_floor * scale).max(1e-10);
    let mut worst: Option<(f64, Probe)> = None;
    for p in &probes {
        let e = relative_error(p.analytic, p.numeric, floor);
        if worst.as_ref().is_none_or(|(w, _)| e > *w) {
            worst = Some((e, p.clone()));
        }
    }
    GradCheckReport {
        max_rel_error: worst.as_ref().map_or(0.0, |(e, _)| *e),
        worst: worst.map(|(_, p)| p),
        probes,
    }
}

/// Evenly spaced coordinate subset of `0..len`, deterministic.
pub fn coordinate_subset(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|i| (i * len + len / (2 * m)) / m).collect(),
        _ => (0..len).collect(),
    }
}

fn analytic_gradients<T: Scalar, O: Objective>(objective: &O, inputs: &[Tensor<f64>]) -> Result<Vec<Option<Vec<f64>>>> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.cast())).collect();
    let loss = objective.eval(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let values = vars.iter().map(|&v| grads.get(v).map(|a| a.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())).collect();
    Ok(values)
}

/// Checks d(objective)/d(input) for every input tensor.
pub fn check<O: Objective>(
    objective: &O,
    inputs: &[Tensor<f64>],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    // Both sides start from the same f32-representable point.
    let inputs: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<f32>().cast()).collect();
    let analytic = if config.analytic_f64 {
        analytic_gradients::<f64, O>(objective, &inputs)?
    } else {
        analytic_gradients::<f32, O>(objective, &inputs)?
    };

    let eval64 = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = objective.eval(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut probes = Vec::new();
    let mut work = inputs.clone();
    for k in 0..inputs.len() {
        let analytic = &analytic[k];
        for idx in coordinate_subset(inputs[k].len(), config.max_coords_per_input) {
            let x0 = inputs[k].data()[idx];
            work[k].data_mut()[idx] = x0 + config.step;
            let up = eval64(&work)?;
            work[k].data_mut()[idx] = x0 - config.step;
            let down = eval64(&work)?;
            work[k].data_mut()[idx] = x0;
            probes.push(Probe {
                input: k,
                index: idx,
                analytic: analytic.as_ref().map_or(0.0, |a| a[idx]),
                numeric: (up - down) / (2.0 * config.step),
            });
        }
    }
    Ok(score(probes, config.relative_floor))
}
