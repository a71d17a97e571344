use super::{DiffError, Tape, Tensor, Var};

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged on absolute error instead of finite-difference noise.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `f` builds a scalar on the tape from one leaf per entry of `params`.
/// Every parameter entry is perturbed by `±eps`; the check passes iff the
/// largest relative error is at most `tol`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(DiffError::InvalidArgument(format!("eps {} outside [1e-7, 1e-3]", eps)));
    }
    let eval = |ps: &[Tensor]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(DiffError::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
        tol,
        passed: true,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((pi, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
