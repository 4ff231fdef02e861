//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it is checking.

use super::{Tape, Tensor, TensorError, Var};

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Denominator floor for relative errors. Components whose analytic and
/// numeric magnitudes are both below it are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub input: usize,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub checked: usize,
}

/// Central-difference estimate of `d f / d x` for every element of `x`.
pub fn numeric_grad<F>(x: &Tensor, mut f: F) -> Result<Tensor, TensorError>
where
    F: FnMut(&Tensor) -> Result<f64, TensorError>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - STEP;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * STEP));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn compare(input: usize, analytic: &Tensor, numeric: &Tensor) -> CheckResult {
    let mut worst = (0.0, 0);
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = rel_err(a, n);
        if e > worst.0 || e.is_nan() {
            worst = (e, i);
        }
    }
    CheckResult {
        input,
        max_rel_err: worst.0,
        worst_element: worst.1,
        checked: analytic.numel(),
    }
}

/// Checks the gradient of a scalar function built on a fresh tape with
/// respect to every input.
pub fn check<F>(inputs: &[Tensor], build: F) -> Result<Vec<CheckResult>, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    check_tampered(inputs, build, |_| {})
}

/// [`check`] with `tamper` applied to the analytic gradients before the
/// comparison. Negative controls use it to confirm a fault is caught.
pub fn check_tampered<F, G>(inputs: &[Tensor], build: F, tamper: G) -> Result<Vec<CheckResult>, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
    G: FnOnce(&mut [Tensor]),
{
    let mut analytic = analytic_grads(inputs, &build)?;
    tamper(&mut analytic);
    let mut results = Vec::with_capacity(inputs.len());
    for (k, a) in analytic.iter().enumerate() {
        let numeric = numeric_grad(&inputs[k], |probe| {
            let mut perturbed = inputs.to_vec();
            perturbed[k] = probe.clone();
            eval(&perturbed, &build)
        })?;
        results.push(compare(k, a, &numeric));
    }
    Ok(results)
}

/// Analytic gradients of the scalar built by `build`; inputs that do not
/// reach the output get zeros.
pub fn analytic_grads<F>(inputs: &[Tensor], build: &F) -> Result<Vec<Tensor>, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn eval<F>(inputs: &[Tensor], build: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let res = check(&[x], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        })
        .unwrap();
        assert!(res[0].max_rel_err < 1e-8, "{res:?}");
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!(rel_err(1.0, 1.0 + 1e-9) < 1e-8);
        assert!((rel_err(1e-12, 0.0) - 1e-6).abs() < 1e-18);
    }
}
