//! Central finite-difference gradient checks.

use rand::RngExt;

use super::array::Tensor;
use super::graph::{Graph, Mode};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Probes whose interval straddles a kink of the function (relu, max),
    /// where a central difference is meaningless; excluded from the error.
    pub kinks: usize,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(max_rel_error: f64, tolerance: f64, checked: usize, kinks: usize) -> Self {
        Self {
            max_rel_error,
            tolerance,
            checked,
            kinks,
            passed: max_rel_error < tolerance && kinks * 20 <= checked,
        }
    }
}

/// Central difference of `at(offset)` around offset 0, or `None` when the
/// function has a kink (relu, max) next to the probe.
///
/// A slope jump inside `[-h, h]` biases the central difference by half the
/// disagreement ("spread") of the one-sided slopes. While the spread exceeds
/// `tolerance` the step is refined by 10, at most twice. Curvature shows as
/// a tenfold smaller spread with an unchanged estimate; a kink keeps its
/// spread, or moves the estimate when it leaves the interval.
fn central_difference(
    mut at: impl FnMut(f64) -> Result<f64>,
    centre: f64,
    step: f64,
    tolerance: f64,
) -> Result<Option<f64>> {
    let mut prev: Option<(f64, f64)> = None;
    let mut h = step;
    for _ in 0..3 {
        let up = at(h)?;
        let down = at(-h)?;
        let estimate = (up - down) / (2.0 * h);
        let spread = relative_error((up - centre) / h, (centre - down) / h);
        if let Some((coarse, coarse_spread)) = prev {
            let tenfold = (0.05..=0.2).contains(&(spread / coarse_spread));
            if tenfold && relative_error(coarse, estimate) <= tolerance / 4.0 {
                return Ok(Some(coarse));
            }
        }
        if spread <= tolerance {
            return Ok(Some(estimate));
        }
        prev = Some((estimate, spread));
        h /= 10.0;
    }
    Ok(None)
}

/// Relative error with an absolute floor at the round-off level of a
/// central difference with step 1e-5, so that exact zeros compare
/// against round-off rather than dividing by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract("grad_check function must be scalar".into()));
    }
    let s = t.data()[0];
    if !s.is_finite() {
        return Err(Error::Numeric("non-finite function value in grad_check".into()));
    }
    Ok(s)
}

/// Checks every element of every input of a scalar tape function.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let centre = scalar_of(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let base = input.data()[j];
            let numeric = central_difference(
                |d| {
                    probe[i].data_mut()[j] = base + d;
                    eval(&probe)
                },
                centre,
                step,
                tolerance,
            )?;
            probe[i].data_mut()[j] = base;
            checked += 1;
            match numeric {
                Some(n) => worst = worst.max(relative_error(analytic[i].data()[j], n)),
                None => kinks += 1,
            }
        }
    }
    Ok(GradCheckReport::new(worst, tolerance, checked, kinks))
}

/// Checks parameter gradients of a model-level scalar function, probing up
/// to `per_param` random entries of every parameter tensor.
///
/// Each evaluation runs in train mode with a dropout stream re-seeded from
/// `seed`, so stochastic masks are identical across evaluations.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    mut f: F,
    per_param: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    let mut eval = |store: &mut ParamStore, with_grad: bool| -> Result<f64> {
        let mut r = rng::stream(seed, "gradcheck.dropout");
        let mut g = Graph::new(store, Mode::Train, Some(&mut r));
        let out = f(&mut g)?;
        let s = scalar_of(&g.tape, out)?;
        if with_grad {
            g.backward(out)?;
        }
        Ok(s)
    };
    let snapshot = store.clone();
    store.zero_grads();
    let centre = eval(store, true)?;
    let analytic: Vec<Tensor> = store.params().iter().map(|p| p.grad.clone()).collect();

    let mut pick = rng::stream(seed, "gradcheck.probe");
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let entries: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| pick.random_range(0..n)).collect()
        };
        for j in entries {
            let base = snapshot.params()[pi].value.data()[j];
            let numeric = central_difference(
                |d| {
                    store.params_mut()[pi].value.data_mut()[j] = base + d;
                    eval(store, false)
                },
                centre,
                step,
                tolerance,
            )?;
            store.params_mut()[pi].value.data_mut()[j] = base;
            checked += 1;
            match numeric {
                Some(n) => worst = worst.max(relative_error(grad.data()[j], n)),
                None => kinks += 1,
            }
        }
    }
    *store = snapshot;
    Ok(GradCheckReport::new(worst, tolerance, checked, kinks))
}
