use alloc::vec::Vec;

use super::{NumericsError, Tape, Tensor, Var};

/// Central-difference gradient check.
///
/// `error` is the maximum over checked components of
/// `|analytic − central| / max(1, |analytic|)`. A component whose one-sided
/// slopes disagree by more than `kink_tol · max(1, |central|)` is reported
/// as [`NumericsError::NonDifferentiable`] instead of being averaged away.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub kink_tol: f64,
    /// Restrict the check to these flat indices; `None` checks every component.
    pub components: Option<Vec<usize>>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            kink_tol: 1e-2,
            components: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub worst_component: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    pub fn run<F, E>(&self, f: F, x: &Tensor) -> Result<GradCheckReport, NumericsError>
    where
        F: Fn(&mut Tape, Var) -> Result<Var, E>,
        E: Into<NumericsError>,
    {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.detached().with_requires_grad(true));
        let loss = f(&mut tape, xv).map_err(Into::into)?;
        let value = tape.value(loss).item().ok_or_else(|| NumericsError::NonScalarLoss {
            shape: tape.shape(loss).to_vec(),
        })?;
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { index: 0 });
        }
        let grads = tape.backward(loss)?;
        let analytic = grads.get(xv).map(<[f64]>::to_vec).unwrap_or_default();

        let eval = |probe: &Tensor, index: usize| -> Result<f64, NumericsError> {
            let mut tape = Tape::new();
            let v = tape.constant(probe.clone());
            let out = f(&mut tape, v).map_err(Into::into)?;
            let y = tape.value(out).item().unwrap_or(f64::NAN);
            if y.is_finite() {
                Ok(y)
            } else {
                Err(NumericsError::NonFinite { index })
            }
        };

        let all: Vec<usize>;
        let indices: &[usize] = match &self.components {
            Some(c) => c,
            None => {
                all = (0..x.len()).collect();
                &all
            }
        };
        let h = self.step;
        let mut report = GradCheckReport {
            max_error: 0.0,
            worst_component: 0,
            checked: 0,
        };
        let mut probe = x.detached();
        for &i in indices {
            if i >= x.len() {
                return Err(NumericsError::IndexOutOfRange { index: i, size: x.len() });
            }
            let a = analytic[i];
            if !a.is_finite() {
                return Err(NumericsError::NonFinite { index: i });
            }
            let x0 = x.data()[i];
            probe.data_mut()[i] = x0 + h;
            let plus = eval(&probe, i)?;
            probe.data_mut()[i] = x0 - h;
            let minus = eval(&probe, i)?;
            probe.data_mut()[i] = x0;
            let right = (plus - value) / h;
            let left = (value - minus) / h;
            let central = (plus - minus) / (2.0 * h);
            if (right - left).abs() > self.kink_tol * central.abs().max(1.0) {
                return Err(NumericsError::NonDifferentiable { index: i, left, right });
            }
            let err = (a - central).abs() / a.abs().max(1.0);
            if err > report.max_error || report.checked == 0 {
                report.max_error = err;
                report.worst_component = i;
            }
            report.checked += 1;
        }
        Ok(report)
    }
}

/// Checks every component of `x` with step `h`; see [`GradCheck`].
pub fn grad_check<F, E>(f: F, x: &Tensor, h: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: Into<NumericsError>,
{
    GradCheck::with_step(h).run(f, x).map(|r| r.max_error)
}
