use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst disagreement between tape and finite-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)` at the worst coordinate.
    pub max_rel_error: f64,
    /// Which input and which flat coordinate within it.
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of coordinates perturbed.
    pub checked: usize,
}

/// Compares the gradient of a scalar closure against central differences.
///
/// Every coordinate of every input is perturbed by `±eps`. The closure must
/// be deterministic and return a one-element tensor.
pub fn finite_diff_gradcheck<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Usage(format!("gradcheck step must be positive, got {eps}")));
    }
    let scalar = |xs: &[Tensor]| -> Result<f64> {
        let out = f(xs)?;
        if out.numel() != 1 {
            return Err(Error::Usage(format!(
                "gradcheck needs a scalar-valued closure, got shape {:?}",
                out.shape()
            )));
        }
        out.item()
    };

    let tracked: Vec<Tensor> = inputs.iter().map(Tensor::tracked).collect();
    let out = f(&tracked)?;
    if out.numel() != 1 {
        return Err(Error::Usage(format!(
            "gradcheck needs a scalar-valued closure, got shape {:?}",
            out.shape()
        )));
    }
    out.reshape(&[])?.backward()?;

    let mut report = GradcheckReport { max_rel_error: 0.0, input: 0, index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    for (i, t) in tracked.iter().enumerate() {
        let analytic = t.grad().map_or_else(|| vec![0.0; t.numel()], |g| g.to_vec());
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = inputs[i].data()[j];
            let (hi, lo) = (x0 + eps, x0 - eps);
            let at = |value: f64| -> Result<f64> {
                let mut xs: Vec<Tensor> = inputs.to_vec();
                let mut data = inputs[i].to_vec();
                data[j] = value;
                xs[i] = Tensor::new(data, inputs[i].shape())?;
                scalar(&xs)
            };
            // divide by the step actually represented, not the nominal 2·eps
            let numeric = (at(hi)? - at(lo)?) / (hi - lo);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report = GradcheckReport { max_rel_error: err, input: i, index: j, analytic: a, numeric, checked: report.checked };
            }
        }
    }
    Ok(report)
}
