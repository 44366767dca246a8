//! Central finite-difference checks of analytic gradients.

use super::{Graph, ParamStore, Tensor, TensorError, Var};

/// Denominator floor for relative errors, so that gradients that are zero
/// on both sides compare as equal.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Element with the largest relative error, as `name[index]`.
    pub worst: Option<String>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(tolerance: f64) -> Self {
        GradCheckReport {
            checked: 0,
            max_relative_error: 0.0,
            max_absolute_error: 0.0,
            worst: None,
            tolerance,
            passed: true,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        self.max_absolute_error = self.max_absolute_error.max((analytic - numeric).abs());
        if rel > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = rel;
            self.worst = Some(format!("{name}[{index}]"));
        }
        self.passed = self.max_relative_error <= self.tolerance;
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_absolute_error = self.max_absolute_error.max(other.max_absolute_error);
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
        self.passed = self.max_relative_error <= self.tolerance;
    }
}

/// Compares a caller-supplied analytic gradient of `value` at `x` against
/// central differences.
pub fn check_fn(
    name: &str,
    mut value: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    x: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::new(tolerance);
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = value(&probe);
        probe[i] = x[i] - step;
        let down = value(&probe);
        probe[i] = x[i];
        report.record(name, i, analytic[i], (up - down) / (2.0 * step));
    }
    report
}

/// Checks gradients of the scalar built by `f` with respect to every
/// element of every input.
pub fn check_inputs<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<(Graph, Vec<Var>, Var), TensorError> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.leaf(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (graph, vars, out) = eval(inputs)?;
    let grads = graph.backward(out)?;
    let mut report = GradCheckReport::new(tolerance);
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let mut scratch = inputs.to_vec();
        let part = check_fn(
            &format!("input{k}"),
            |x| {
                scratch[k].data_mut().copy_from_slice(x);
                eval(&scratch)
                    .map(|(g, _, o)| g.value(o).item())
                    .unwrap_or(f64::NAN)
            },
            &analytic,
            input.data(),
            step,
            tolerance,
        );
        report.merge(part);
    }
    Ok(report)
}

/// Checks gradients of the scalar built by `f` with respect to every
/// parameter in `store`.
pub fn check_params<F>(
    store: &ParamStore,
    f: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, TensorError>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut graph = Graph::new();
    let out = f(&mut graph, &work)?;
    graph.backward(out)?.accumulate_into(&mut work);
    let mut report = GradCheckReport::new(tolerance);
    for id in store.ids() {
        let analytic = work.grad(id).data().to_vec();
        let name = store.get(id).name.clone();
        let mut scratch = store.clone();
        let part = check_fn(
            &name,
            |x| {
                scratch.value_mut(id).data_mut().copy_from_slice(x);
                let mut g = Graph::new();
                f(&mut g, &scratch)
                    .map(|o| g.value(o).item())
                    .unwrap_or(f64::NAN)
            },
            &analytic,
            store.value(id).data(),
            step,
            tolerance,
        );
        report.merge(part);
    }
    Ok(report)
}

/// Moves entries closer than `margin` to zero out to `±margin`, keeping
/// finite-difference probes off ReLU kinks.
pub fn nudge_away_from_zero(t: &mut Tensor, margin: f64) {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
}
