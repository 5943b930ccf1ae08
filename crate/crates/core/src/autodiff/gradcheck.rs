use super::graph::{Bindings, Executor, Graph, NodeId};
use super::Tensor;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaf: String,
    pub max_rel_error: f64,
    /// Flat coordinate of the worst disagreement.
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
    /// Set when the graph could not be evaluated at all.
    pub failure: Option<String>,
}

/// Denominator floor of [`relative_error`]; keeps finite-difference rounding
/// noise on (near-)zero gradients from reading as a large relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Relative error with denominator `max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Checks d(output)/d(leaf) coordinate by coordinate against a five-point
/// central difference with step `h`.
/// `coords` limits the check to a subset of flat indices (all when `None`).
pub fn grad_check(
    graph: &Graph,
    leaves: &Bindings<'_, '_>,
    output: NodeId,
    leaf: &str,
    h: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        leaf: leaf.to_string(),
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
        passed: false,
        failure: None,
    };
    match check_inner(graph, leaves, output, leaf, h, coords, &mut report) {
        Ok(()) => report.passed = report.max_rel_error <= tol,
        Err(msg) => report.failure = Some(msg),
    }
    report
}

fn eval_scalar(graph: &Graph, leaves: &Bindings<'_, '_>, output: NodeId) -> Result<f64, String> {
    let mut exec = Executor::new(graph);
    exec.run(leaves).map_err(|e| e.to_string())?;
    Ok(exec.value(output).unwrap().item())
}

fn check_inner(
    graph: &Graph,
    leaves: &Bindings<'_, '_>,
    output: NodeId,
    leaf: &str,
    h: f64,
    coords: Option<&[usize]>,
    report: &mut GradCheckReport,
) -> Result<(), String> {
    if h <= 0.0 || !h.is_finite() {
        return Err(format!("step h must be positive, got {h}"));
    }
    let base = *leaves.get(leaf).ok_or_else(|| format!("leaf `{leaf}` not bound"))?;
    let mut exec = Executor::new(graph);
    exec.run(leaves).map_err(|e| e.to_string())?;
    let analytic = exec.backward_leaves(output, &[leaf]).map_err(|e| e.to_string())?;
    let analytic = &analytic[leaf];

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..base.len()).collect();
            &all
        }
    };
    let mut probe: Tensor = base.clone();
    for &i in coords {
        let orig = probe.data()[i];
        let mut at = |x: f64| -> Result<f64, String> {
            probe.data_mut()[i] = x;
            let mut b = leaves.clone();
            b.insert(leaf, &probe);
            eval_scalar(graph, &b, output)
        };
        // Five-point central stencil, truncation error O(h^4).
        let numeric = (-at(orig + 2.0 * h)? + 8.0 * at(orig + h)? - 8.0 * at(orig - h)?
            + at(orig - 2.0 * h)?)
            / (12.0 * h);
        probe.data_mut()[i] = orig;
        let err = relative_error(analytic.data()[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(())
}
