//! Central-difference gradient checking for graph-built functions.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::{Error, Result, Tensor};

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, ABS_FLOOR)`.
    pub max_rel_err: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose ±h probes crossed a non-differentiable point
    /// (relu kink, pooling tie, sampler cell edge, loss clamp).
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / scale
}

fn evaluate<F>(build: &F, inputs: &[Tensor]) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let v = g.value(out).item().ok_or_else(|| Error::NonScalarLoss {
        shape: g.shape(out).to_vec(),
    })?;
    Ok((v, g.branch_signature()))
}

/// Compares the analytic gradient of the scalar built by `build` with
/// central differences of step `h` in every coordinate of every input.
pub fn grad_check<F>(build: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::Config(alloc::format!(
            "finite-difference step {h} outside (0, 1e-2]"
        )));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("grad_check inputs must be finite".into()));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let base_sig = g.branch_signature();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[k].len() {
            let x = inputs[k].data()[j];
            probe[k].data_mut()[j] = x + h;
            let (plus, sig_p) = evaluate(&build, &probe)?;
            probe[k].data_mut()[j] = x - h;
            let (minus, sig_m) = evaluate(&build, &probe)?;
            probe[k].data_mut()[j] = x;
            if sig_p != base_sig || sig_m != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[j], numeric);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
