//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParamSet;

/// Denominator floor of the relative error.
///
/// Central differences at δ = 1e-5 carry rounding noise around 1e-10 once
/// intermediate values cancel (clamped log terms of about -33 do), so entries
/// with smaller gradients are compared on an absolute scale: a gradient below
/// the floor passes a 1e-4 tolerance when it is within 1e-9 of the estimate.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

fn evaluate<F>(params: &ParamSet, loss: &F) -> f64
where
    F: Fn(&mut Tape) -> Var,
{
    let mut tape = Tape::new(params);
    let root = loss(&mut tape);
    tape.value(root).item()
}

/// Compares the analytic gradient of `loss` against
/// `(loss(x+δ) - loss(x-δ)) / 2δ` for every entry of every parameter.
///
/// `loss` must record a scalar on the tape it is given and read parameters
/// only through that tape. Parameters are restored bit-exactly afterwards.
pub fn gradient_check<F>(
    params: &mut ParamSet,
    loss: F,
    delta: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Var,
{
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let first = evaluate(params, &loss);
    let second = evaluate(params, &loss);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let grads = {
        let mut tape = Tape::new(params);
        let root = loss(&mut tape);
        tape.backward(root)
    };

    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(ids.len()),
        tolerance,
    };
    for id in ids {
        let analytic = grads.dense(id, params);
        let mut check = ParamCheck {
            name: params.get(id).name.clone(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..analytic.numel() {
            let original = params.get(id).tensor.values()[i];
            params.get_mut(id).tensor.values_mut()[i] = original + delta;
            let plus = evaluate(params, &loss);
            params.get_mut(id).tensor.values_mut()[i] = original - delta;
            let minus = evaluate(params, &loss);
            params.get_mut(id).tensor.values_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * delta);
            let a = analytic.values()[i];
            let err = relative_error(a, numeric);
            if err > check.max_relative_error || i == 0 {
                check.max_relative_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{LrGroup, Parameter};
    use crate::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn linear_sum_has_zero_error() {
        let mut set = ParamSet::new();
        let id = set
            .add(Parameter::new(
                "v",
                Tensor::from_rows(&[vec![0.5, -2.0, 3.25]]).unwrap(),
                LrGroup::Other,
            ))
            .unwrap();
        let report = gradient_check(
            &mut set,
            |tape| {
                let v = tape.param(id);
                tape.sum(v)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        let grads = {
            let mut tape = Tape::new(&set);
            let v = tape.param(id);
            let s = tape.sum(v);
            tape.backward(s)
        };
        assert_eq!(grads.dense(id, &set).values(), &[1.0, 1.0, 1.0]);
        assert!(report.max_relative_error() < 1e-9);
    }

    #[test]
    fn quadratic_matches_closely() {
        let mut set = ParamSet::new();
        let id = set
            .add(Parameter::new("x", Tensor::scalar(3.0), LrGroup::Other))
            .unwrap();
        let report = gradient_check(
            &mut set,
            |tape| {
                let x = tape.param(id);
                tape.mul(x, x)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        let check = &report.params[0];
        assert_eq!(check.analytic, 6.0);
        assert!((check.numeric - 6.0).abs() / 6.0 < 1e-8);
        assert_eq!(set.get(id).tensor.item(), 3.0);
    }

    #[test]
    fn detects_nondeterminism() {
        let mut set = ParamSet::new();
        let id = set
            .add(Parameter::new("x", Tensor::scalar(1.0), LrGroup::Other))
            .unwrap();
        let calls = Cell::new(0u32);
        let result = gradient_check(
            &mut set,
            |tape| {
                calls.set(calls.get() + 1);
                let x = tape.param(id);
                tape.scale(x, calls.get() as f64)
            },
            1e-5,
            1e-4,
        );
        assert!(matches!(result, Err(Error::NonDeterministic { .. })));
    }

    #[test]
    fn rejects_non_positive_delta() {
        let mut set = ParamSet::new();
        assert!(gradient_check(
            &mut set,
            |tape| tape.constant(Tensor::scalar(0.0)),
            0.0,
            1e-4
        )
        .is_err());
    }
}
