use super::{Gradients, Graph, NodeId, ParamStore};
use crate::error::{Error, Result};

/// Result of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    /// Largest relative error over all parameter entries.
    pub max_relative_error: f64,
    /// Parameter name and flat offset where the largest error occurred.
    pub worst: Option<(String, usize)>,
    pub analytic: Gradients,
    pub numeric: Gradients,
}

/// `|a - c| / max(|a| + |c|, 1e-6)`.
///
/// The floor keeps entries whose true gradient is below the roundoff of a
/// central difference from dominating the maximum.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Central-difference gradient of `f` with respect to every entry of `params`.
pub fn numeric_gradient<F>(f: F, params: &ParamStore, step: f64) -> Result<Gradients>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = params.clone();
    let mut grads = params.zero_gradients();
    for p in 0..params.len() {
        for i in 0..params.by_index(p).len() {
            let original = params.by_index(p).data()[i];
            probe.values_mut(p)[i] = original + step;
            let plus = finite(f(&probe)?)?;
            probe.values_mut(p)[i] = original - step;
            let minus = finite(f(&probe)?)?;
            probe.values_mut(p)[i] = original;
            grads.arrays_mut()[p].data_mut()[i] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("finite-difference evaluation".into()))
    }
}

/// Compares two gradient maps entry by entry with [`relative_error`].
pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients) -> (f64, Option<(String, usize)>) {
    let mut worst = None;
    let mut max = 0.0;
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let err = relative_error(x, y);
            if worst.is_none() || err > max {
                max = err;
                worst = Some((name.to_string(), i));
            }
        }
    }
    (max, worst)
}

/// Checks [`Graph::backward`] for the scalar built by `build` against central
/// differences with step `step`.
///
/// `build` receives a fresh graph bound to the parameters being probed and must
/// return the scalar root.
pub fn finite_diff_check<F>(build: F, params: &ParamStore, step: f64) -> Result<FiniteDiffReport>
where
    F: for<'p> Fn(&mut Graph<'p>) -> Result<NodeId>,
{
    let mut graph = Graph::with_params(params);
    let root = build(&mut graph)?;
    finite(graph.scalar(root))?;
    let analytic = graph.backward(root)?;
    let numeric = numeric_gradient(
        |store| {
            let mut g = Graph::with_params(store);
            let r = build(&mut g)?;
            Ok(g.scalar(r))
        },
        params,
        step,
    )?;
    let (max_relative_error, worst) = compare_gradients(&analytic, &numeric);
    Ok(FiniteDiffReport {
        max_relative_error,
        worst,
        analytic,
        numeric,
    })
}
