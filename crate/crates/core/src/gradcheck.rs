//! Finite-difference verification of reverse-mode gradients.
//!
//! [`check_graph`] compares the tape's gradient of a scalar graph with central
//! differences of the same graph evaluated as a plain function. [`run_suite`]
//! bundles every primitive op, the GRU cell, the samplers and a full HSVAE
//! objective into named cases.

use crate::diff::{forward_backward, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_grad, GradCheckReport};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Analytic vs numeric gradient of the scalar graph `build(inputs)`.
pub fn check_graph(
    inputs: &[Tensor],
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = forward_backward(inputs, &build)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data().iter().copied()).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let shapes: Vec<[usize; 2]> = inputs.iter().map(Tensor::shape).collect();
    let eval = |x: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let mut offset = 0;
        let mut vars = Vec::with_capacity(shapes.len());
        for &[r, c] in &shapes {
            let t = Tensor::new(r, c, x[offset..offset + r * c].to_vec())?;
            offset += r * c;
            vars.push(g.constant(t));
        }
        let out = build(&mut g, &vars)?;
        g.check_finite()?;
        Ok(g.item(out))
    };
    let numeric = finite_diff_grad(eval, &flat, step)?;
    GradCheckReport::new(analytic, numeric)
}

/// One named gradient check with its pass threshold.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

pub(crate) fn case(name: &str, tolerance: f64, report: Result<GradCheckReport>) -> Result<GradCase> {
    let report = report.map_err(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("{name}: {m}")),
        other => other,
    })?;
    Ok(GradCase { name: name.to_string(), tolerance, report })
}

pub use suite::run_suite;

mod suite;
