use super::{AutodiffError, Bound, ParamId, ParamStore, Result, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradEntry {
    pub fn rel_error(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(1e-8);
        (self.analytic - self.numeric).abs() / denom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub entries: Vec<GradEntry>,
}

/// Central difference `(f(x + h) - f(x - h)) / 2h` of a scalar function.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Fourth-order central difference
/// `(f(x - 2h) - 8 f(x - h) + 8 f(x + h) - f(x + 2h)) / 12h`.
pub fn central_difference4(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    ((f(x - 2.0 * h) - f(x + 2.0 * h)) + 8.0 * (f(x + h) - f(x - h))) / (12.0 * h)
}

fn evaluate<F>(params: &ParamStore<f64>, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    if tape.value(loss).len() != 1 {
        return Err(AutodiffError::NonScalarLoss(tape.shape(loss).to_vec()));
    }
    Ok(tape.scalar(loss))
}

/// Compares tape gradients of `f` against fourth-order central finite
/// differences for every entry of every parameter. The relative error of one entry is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `f` must be deterministic; two unperturbed evaluations that differ are
/// rejected. Gradients already held by `params` are left untouched.
pub fn gradient_check<F>(params: &mut ParamStore<f64>, h: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let first = evaluate(params, &mut f)?;
    let second = evaluate(params, &mut f)?;
    if first.to_bits() != second.to_bits() {
        return Err(AutodiffError::NonDeterministic(first, second));
    }

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        entries: Vec::new(),
    };
    let ids: Vec<ParamId> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let n = params.get(id).numel();
        let analytic: Vec<f64> = grads
            .get(bound.get(id))
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        for (k, a) in analytic.iter().enumerate() {
            let orig = params.get(id).values()[k];
            let mut at = |x: f64| {
                params.get_mut(id).values_mut()[k] = x;
                evaluate(params, &mut f)
            };
            let stencil = [at(orig - 2.0 * h), at(orig - h), at(orig + h), at(orig + 2.0 * h)];
            params.get_mut(id).values_mut()[k] = orig;
            let [m2, m1, p1, p2] = stencil;
            // Differences first, so a flat direction gives exactly zero.
            let numeric = ((m2? - p2?) + 8.0 * (p1? - m1?)) / (12.0 * h);
            let entry = GradEntry {
                param: id,
                index: k,
                analytic: *a,
                numeric,
            };
            let rel = entry.rel_error();
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
            }
            report.entries.push(entry);
        }
    }
    Ok(report)
}
