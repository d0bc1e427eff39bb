//! Central finite-difference verification of analytic gradients.

use crate::autodiff::tape::{FaultInjection, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

/// Denominator floor for the relative error, so that gradients which are
/// both essentially zero compare by absolute difference instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub epsilon: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    pub fault: FaultInjection,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            tolerance: 1e-5,
            fault: FaultInjection::None,
        }
    }
}

fn check_scalar(tape: &Tape, out: Var) -> Result<f64> {
    if tape.shape(out) != [1] {
        return Err(Error::dim("grad_check", tape.shape(out), &[1]));
    }
    Ok(tape.scalar(out))
}

fn compare(name: String, analytic: &[f64], numeric: &[f64], tol: f64) -> TensorCheck {
    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    TensorCheck {
        name,
        max_rel_err,
        worst_index,
        passed: max_rel_err <= tol,
    }
}

/// Checks the gradients of a scalar function of free tensors.
///
/// `f` receives a tape and one leaf per input (in order) and must return
/// a scalar node.
pub fn grad_check<F>(inputs: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if opts.epsilon <= 0.0 {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let eval = |xs: &[Tensor], fault: FaultInjection| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::with_fault(fault);
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(&x.clone().with_grad())).collect();
        let out = f(&mut tape, &vars)?;
        check_scalar(&tape, out)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs, opts.fault)?;
    let (tape2, _, out2) = eval(inputs, opts.fault)?;
    if tape.scalar(out).to_bits() != tape2.scalar(out2).to_bits() {
        return Err(Error::OracleInvalid(
            "function is not deterministic under re-evaluation".into(),
        ));
    }
    let grads = tape.backward(out)?;

    let mut tensors = Vec::with_capacity(inputs.len());
    let mut xs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + opts.epsilon;
            let (t, _, o) = eval(&xs, FaultInjection::None)?;
            let plus = t.scalar(o);
            xs[k].data_mut()[i] = orig - opts.epsilon;
            let (t, _, o) = eval(&xs, FaultInjection::None)?;
            let minus = t.scalar(o);
            xs[k].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * opts.epsilon);
        }
        tensors.push(compare(
            format!("input[{k}]"),
            grads.wrt(*var),
            &numeric,
            opts.tolerance,
        ));
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        epsilon: opts.epsilon,
        tensors,
    })
}

/// Checks the gradients of a scalar loss with respect to every tensor in
/// `params`. The report lists each parameter exactly once, in order.
pub fn grad_check_params<F>(params: &ParamSet, opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<Var>,
{
    if opts.epsilon <= 0.0 {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let eval = |p: &ParamSet, fault: FaultInjection| -> Result<(Tape, Var)> {
        let mut tape = Tape::with_fault(fault);
        let out = f(p, &mut tape)?;
        check_scalar(&tape, out)?;
        Ok((tape, out))
    };
    let (tape, out) = eval(params, opts.fault)?;
    let (tape2, out2) = eval(params, opts.fault)?;
    if tape.scalar(out).to_bits() != tape2.scalar(out2).to_bits() {
        return Err(Error::OracleInvalid(
            "function is not deterministic under re-evaluation".into(),
        ));
    }
    let mut analytic = params.clone();
    analytic.zero_grads();
    tape.backward(out)?.accumulate_into(&mut analytic);

    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.epsilon;
            let (t, o) = eval(&work, FaultInjection::None)?;
            let plus = t.scalar(o);
            work.get_mut(id).data_mut()[i] = orig - opts.epsilon;
            let (t, o) = eval(&work, FaultInjection::None)?;
            let minus = t.scalar(o);
            work.get_mut(id).data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * opts.epsilon);
        }
        let zeros = vec![0.0; n];
        let a = analytic.get(id).grad.as_deref().unwrap_or(&zeros);
        tensors.push(compare(params.name(id).to_string(), a, &numeric, opts.tolerance));
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        epsilon: opts.epsilon,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let opts = GradCheckOptions {
            epsilon: 1e-3,
            ..Default::default()
        };
        let report = grad_check(&[x], opts, |t, v| t.mul(v[0], v[0])).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_backward_is_reported() {
        let a = Tensor::matrix(2, 2, vec![0.3, -0.2, 0.5, 1.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![1.5, 0.1, -0.7, 0.4]).unwrap();
        let opts = GradCheckOptions {
            fault: FaultInjection::MatMul,
            ..Default::default()
        };
        let report = grad_check(&[a, b], opts, |t, v| {
            let p = t.matmul(v[0], v[1])?;
            t.sum_squares(p, None)
        })
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 2);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let r = grad_check(&[x], GradCheckOptions::default(), |t, v| t.scale(v[0], 2.0));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn nondeterministic_function_invalidates_oracle() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let x = Tensor::scalar(1.0);
        let r = grad_check(&[x], GradCheckOptions::default(), |t, v| {
            calls.set(calls.get() + 1.0);
            t.scale(v[0], calls.get())
        });
        assert!(matches!(r, Err(Error::OracleInvalid(_))));
    }
}
