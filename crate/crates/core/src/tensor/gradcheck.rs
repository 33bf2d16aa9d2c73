//! Central finite-difference gradient checking.

use alloc::vec::Vec;

use super::{Graph, Tensor, TensorError, Var};

/// Worst-case agreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is ~0 are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = libm::fabs(analytic).max(libm::fabs(numeric)).max(1e-4);
    libm::fabs(analytic - numeric) / denom
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences of step `h` for every input element.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        g.item(root).ok_or(TensorError::NonScalarRoot { shape: g.shape(root).to_vec() })
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[j];
            report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric));
            report.max_abs_err = report.max_abs_err.max(libm::fabs(a - numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Like [`check_gradients`] but perturbs only the listed `(input, element)`
/// coordinates; used for models too large to sweep exhaustively.
pub fn check_gradients_at<F>(
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    h: f64,
    f: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for &(i, j) in coords {
        let a = g.grad(vars[i]).map_or(0.0, |t| t.data()[j]);
        let orig = inputs[i].data()[j];
        let mut side = |value: f64| -> Result<f64, TensorError> {
            work[i].data_mut()[j] = value;
            let mut g2 = Graph::new();
            let vs: Vec<Var> = work.iter().map(|t| g2.constant(t.clone())).collect();
            let root = f(&mut g2, &vs)?;
            Ok(g2.item(root).unwrap_or(f64::NAN))
        };
        let up = side(orig + h)?;
        let down = side(orig - h)?;
        work[i].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric));
        report.max_abs_err = report.max_abs_err.max(libm::fabs(a - numeric));
        report.checked += 1;
    }
    Ok(report)
}
