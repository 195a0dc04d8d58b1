//! Central-difference gradient checker.

use super::{BoundParams, ParamId, ParamStore, Tape, TensorError, Var};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Parameter name and flat element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the scalar `f` against central
/// differences `(f(θ+εe) - f(θ-εe)) / 2ε` for every parameter element.
pub fn grad_check<F, E>(f: F, store: &ParamStore, eps: f64, tol: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, E>,
    E: From<TensorError>,
{
    grad_check_subset(f, store, eps, tol, |_, _| true)
}

/// As [`grad_check`], restricted to elements for which `select(param, index)` holds.
pub fn grad_check_subset<F, S, E>(
    f: F,
    store: &ParamStore,
    eps: f64,
    tol: f64,
    select: S,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, E>,
    S: Fn(ParamId, usize) -> bool,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let analytic = bound.collect_grads(&grads, store);

    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let bound = s.bind_frozen(&mut tape);
        let loss = f(&mut tape, &bound)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite {
                op: "grad_check",
                trace: "perturbed loss".into(),
            }
            .into());
        }
        Ok(v)
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            if !select(id, i) {
                continue;
            }
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[id.index()].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
