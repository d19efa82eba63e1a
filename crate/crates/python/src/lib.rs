//! Python bindings: threshold rules, an end-to-end counterfactual
//! predictor, Gamma-values, worst-case CDFs and the simulation studies.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use robust_conformal::marginal::weighted_conformal_threshold as weighted_threshold;
use robust_conformal::nuisance::{
    bound_functions, fit_propensity, Counterfactual, Population, TargetSpec,
};
use robust_conformal::sensitivity::gamma_value_from_intervals;
use robust_conformal::simulate::{
    run_coverage_experiment, run_sensitivity_experiment, Effect, ProcedureSpec, SensitivityConfig,
    SimConfig,
};
use robust_conformal::worstcase::{
    worst_cdf_marginal, worst_witness_marginal, Atom, MarginalJoint,
};
use robust_conformal::{
    split, CalibrationSet, CounterfactualPredictor, Dataset, EnvelopeMethod, GammaGrid, Interval,
    NullSet, PacConfig, Procedure, Sample, ScoreFn, ScoreKind, SplitSpec,
};
use serde_json::Value;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(raw: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(err)
}

fn procedure(method: &str, delta: f64, bound_m: Option<f64>) -> PyResult<Procedure> {
    Ok(match parse::<ProcedureSpec>(method)? {
        ProcedureSpec::Alg1 => Procedure::Marginal,
        ProcedureSpec::Alg2(m) => {
            let config = PacConfig::new(delta, m);
            Procedure::Pac(match bound_m {
                Some(b) => config.with_bound(b),
                None => config,
            })
        }
    })
}

/// Counterfactual prediction sets fit on observational data: the rows are
/// split into a fitting fold (quantile model and propensity) and a
/// calibration fold.
#[pyclass(name = "Predictor", module = "robust_conformal")]
struct PyPredictor {
    inner: CounterfactualPredictor,
}

#[pymethods]
impl PyPredictor {
    #[new]
    #[pyo3(signature = (x, t, y, counterfactual="y1", population="ate", score="cqr_two_sided", alpha=0.1, train_fraction=0.5, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        x: Vec<Vec<f64>>,
        t: Vec<u8>,
        y: Vec<f64>,
        counterfactual: &str,
        population: &str,
        score: &str,
        alpha: f64,
        train_fraction: f64,
        seed: u64,
    ) -> PyResult<Self> {
        if x.len() != t.len() || x.len() != y.len() {
            return Err(PyValueError::new_err(
                "x, t and y must have the same length",
            ));
        }
        let samples = x
            .into_iter()
            .zip(t)
            .zip(y)
            .map(|((x, t), y)| Sample::new(x, t, y))
            .collect();
        let data = Dataset::new(samples).map_err(err)?;
        let spec = TargetSpec::new(
            parse::<Counterfactual>(counterfactual)?,
            parse::<Population>(population)?,
        )
        .map_err(err)?;
        let (fit, calib) = split(
            &data,
            SplitSpec {
                train_fraction,
                seed,
            },
        )
        .map_err(err)?;
        let propensity = fit_propensity(&fit).map_err(err)?;
        let bounds = bound_functions(&spec, 1.0, Arc::new(propensity), fit.treated_fraction())
            .map_err(err)?;
        let score =
            ScoreFn::fit(parse::<ScoreKind>(score)?, alpha, &fit.arm(spec.arm())).map_err(err)?;
        let inner = CounterfactualPredictor::from_dataset(score, bounds, &calib).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_calib(&self) -> usize {
        self.inner.n_calib()
    }

    /// `(lo, hi)` per row of `x` and per confounding level; endpoints may be
    /// infinite.
    #[pyo3(signature = (x, gammas, alpha=0.1, method="alg1", delta=0.05, bound_m=None))]
    #[allow(clippy::too_many_arguments)]
    fn intervals(
        &self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        gammas: Vec<f64>,
        alpha: f64,
        method: &str,
        delta: f64,
        bound_m: Option<f64>,
    ) -> PyResult<Vec<Vec<(f64, f64)>>> {
        let proc = procedure(method, delta, bound_m)?;
        py.detach(|| {
            let path = self.inner.path(&gammas, alpha, &proc)?;
            Ok(x.iter()
                .map(|row| {
                    path.iter()
                        .map(|p| {
                            let iv = p.interval(row);
                            (iv.lo, iv.hi)
                        })
                        .collect()
                })
                .collect())
        })
        .map_err(|e: robust_conformal::Error| err(e))
    }

    /// Score thresholds per row of `x` and per confounding level.
    #[pyo3(signature = (x, gammas, alpha=0.1, method="alg1", delta=0.05, bound_m=None))]
    fn thresholds(
        &self,
        x: Vec<Vec<f64>>,
        gammas: Vec<f64>,
        alpha: f64,
        method: &str,
        delta: f64,
        bound_m: Option<f64>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let path = self
            .inner
            .path(&gammas, alpha, &procedure(method, delta, bound_m)?)
            .map_err(err)?;
        Ok(x.iter()
            .map(|row| path.iter().map(|p| p.threshold(row)).collect())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Predictor(n_calib={}, score={:?})",
            self.inner.n_calib(),
            self.inner.score().kind()
        )
    }
}

/// Threshold of the marginal procedure for a test point with upper bound
/// `u_test`.
#[pyfunction]
fn robust_threshold(
    scores: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    u_test: f64,
    alpha: f64,
) -> PyResult<f64> {
    let calib = CalibrationSet::new(scores, lower, upper).map_err(err)?;
    Ok(robust_conformal::robust_threshold(&calib, u_test, alpha))
}

/// Weighted conformal quantile with known weights.
#[pyfunction]
fn weighted_conformal_threshold(
    scores: Vec<f64>,
    weights: Vec<f64>,
    w_test: f64,
    alpha: f64,
) -> PyResult<f64> {
    if scores.len() != weights.len() {
        return Err(PyValueError::new_err(
            "scores and weights must have the same length",
        ));
    }
    let pairs: Vec<(f64, f64)> = scores.into_iter().zip(weights).collect();
    weighted_threshold(&pairs, w_test, alpha).map_err(err)
}

/// Threshold of the PAC procedure; `method` is plugin, hoeffding or wsr.
#[pyfunction]
#[pyo3(signature = (scores, lower, upper, alpha, delta=0.05, method="wsr", bound_m=None))]
fn pac_threshold(
    scores: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    alpha: f64,
    delta: f64,
    method: &str,
    bound_m: Option<f64>,
) -> PyResult<f64> {
    let calib = CalibrationSet::new(scores, lower, upper).map_err(err)?;
    let mut config = PacConfig::new(delta, parse::<EnvelopeMethod>(method)?);
    if let Some(m) = bound_m {
        config = config.with_bound(m);
    }
    robust_conformal::pac_threshold(&calib, alpha, &config).map_err(err)
}

/// Gamma-value from ITE intervals `(lo, hi)` at each grid level. `null` is
/// `le:c`, `ge:c` or `eq:c`. Returns `(value, censored, rejected_any)`.
#[pyfunction]
fn gamma_value(
    grid: Vec<f64>,
    null: &str,
    intervals: Vec<(f64, f64)>,
) -> PyResult<(f64, bool, bool)> {
    let grid = GammaGrid::new(grid).map_err(err)?;
    let null: NullSet = parse(null)?;
    let ivs: Vec<Interval> = intervals
        .into_iter()
        .map(|(lo, hi)| Interval::new(lo, hi))
        .collect();
    let v = gamma_value_from_intervals(&grid, null, &ivs).map_err(err)?;
    Ok((v.value, v.censored, v.rejected_any))
}

fn marginal_joint(
    scores: Vec<f64>,
    mass: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
) -> PyResult<MarginalJoint> {
    if [mass.len(), lower.len(), upper.len()]
        .iter()
        .any(|&n| n != scores.len())
    {
        return Err(PyValueError::new_err(
            "scores, mass, lower and upper must have the same length",
        ));
    }
    let atoms = (0..scores.len())
        .map(|i| Atom {
            score: scores[i],
            mass: mass[i],
            lower: lower[i],
            upper: upper[i],
        })
        .collect();
    MarginalJoint::new(atoms).map_err(err)
}

/// Smallest CDF at `t` over likelihood ratios between `lower` and `upper`
/// with mean one.
#[pyfunction]
fn worst_case_cdf(
    scores: Vec<f64>,
    mass: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    t: f64,
) -> PyResult<f64> {
    Ok(worst_cdf_marginal(
        &marginal_joint(scores, mass, lower, upper)?,
        t,
    ))
}

/// `(t_star, gamma, w)` of the likelihood ratio attaining the worst case
/// at every `t`.
#[pyfunction]
fn worst_case_witness(
    scores: Vec<f64>,
    mass: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let w = worst_witness_marginal(&marginal_joint(scores, mass, lower, upper)?);
    Ok((w.t_star, w.gamma, w.w))
}

/// Applies keyword overrides to a default configuration. `effect` may be
/// given as `"fixed:a"`, and `grid` as a list of levels or as `"STEP:MAX"`.
fn merge_config<T>(default: &T, overrides: Value) -> Result<T, String>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut base = serde_json::to_value(default).map_err(|e| e.to_string())?;
    let Value::Object(overrides) = overrides else {
        return Err("overrides must be a mapping".into());
    };
    let fields = base.as_object_mut().expect("configs serialize to objects");
    for (key, mut value) in overrides {
        if !fields.contains_key(&key) {
            return Err(format!("unknown setting '{key}'"));
        }
        if let ("effect", Value::String(s)) = (key.as_str(), &value) {
            let effect: Effect = s
                .parse()
                .map_err(|e: robust_conformal::Error| e.to_string())?;
            value = serde_json::to_value(effect).map_err(|e| e.to_string())?;
        }
        if key == "grid" {
            let grid = match &value {
                Value::String(s) => match s.split_once(':') {
                    Some((step, max)) => GammaGrid::regular(
                        step.trim().parse().map_err(|_| format!("bad grid '{s}'"))?,
                        max.trim().parse().map_err(|_| format!("bad grid '{s}'"))?,
                    ),
                    None => return Err(format!("bad grid '{s}'")),
                },
                other => GammaGrid::new(
                    serde_json::from_value(other.clone()).map_err(|e| e.to_string())?,
                ),
            }
            .map_err(|e| e.to_string())?;
            value = serde_json::to_value(grid).map_err(|e| e.to_string())?;
        }
        fields.insert(key, value);
    }
    serde_json::from_value(base).map_err(|e| e.to_string())
}

fn kwargs_json(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Value> {
    match kwargs {
        None => Ok(Value::Object(Default::default())),
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(err)
        }
    }
}

fn to_python(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Coverage study; keyword arguments override the default configuration.
/// Returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn simulate_coverage(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let cfg: SimConfig = merge_config(&SimConfig::default(), kwargs_json(py, kwargs)?)
        .map_err(PyValueError::new_err)?;
    let report = py.detach(|| run_coverage_experiment(&cfg)).map_err(err)?;
    to_python(py, &report)
}

/// Gamma-value sensitivity study; keyword arguments override the default
/// configuration. Returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn simulate_sensitivity(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let cfg: SensitivityConfig =
        merge_config(&SensitivityConfig::default(), kwargs_json(py, kwargs)?)
            .map_err(PyValueError::new_err)?;
    let report = py
        .detach(|| run_sensitivity_experiment(&cfg))
        .map_err(err)?;
    to_python(py, &report)
}

#[pymodule]
#[pyo3(name = "_native")]
fn robust_conformal_native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPredictor>()?;
    m.add_function(wrap_pyfunction!(robust_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_conformal_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(pac_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_value, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_witness, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sensitivity, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_apply_with_shorthands() {
        let cfg: SensitivityConfig = merge_config(
            &SensitivityConfig::default(),
            json!({"replicates": 3, "effect": "random:1", "grid": "0.5:2"}),
        )
        .unwrap();
        assert_eq!(cfg.replicates, 3);
        assert_eq!(cfg.effect, Effect::Random(1.0));
        assert_eq!(cfg.grid.values(), &[1.0, 1.5, 2.0]);
        let cfg: SimConfig = merge_config(
            &SimConfig::default(),
            json!({"procedures": ["alg1", "alg2:wsr"], "alphas": [0.2]}),
        )
        .unwrap();
        assert_eq!(cfg.procedures.len(), 2);
    }

    #[test]
    fn unknown_and_malformed_overrides_fail() {
        assert!(merge_config(&SimConfig::default(), json!({"colour": 1})).is_err());
        assert!(merge_config(&SimConfig::default(), json!({"effect": "sideways:1"})).is_err());
        assert!(merge_config(&SensitivityConfig::default(), json!({"grid": [2.0, 3.0]})).is_err());
    }
}
