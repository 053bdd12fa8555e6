use super::{Scalar, Tensor};
use crate::{Error, Result};

/// A scalar-valued map usable at any working precision. Implemented by
/// test harnesses so the same expression can produce a single-precision
/// analytic gradient and a double-precision finite-difference referee.
pub trait GradFn {
    fn call<T: Scalar>(&self, points: &[Tensor<T>]) -> Result<Tensor<T>>;
}

/// Checks the `f32` backward pass of `f` against `f64` central finite
/// differences evaluated at the same points.
///
/// Returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check_f32_vs_f64(
    f: &impl GradFn,
    points: &[(Vec<usize>, Vec<f64>)],
    step: f64,
) -> Result<f64> {
    grad_check_f32_vs_f64_sampled(f, points, step, usize::MAX, 0)
}

/// Like [`grad_check_f32_vs_f64`] but probing at most `max_probes`
/// components, chosen by a seeded shuffle. Full-model losses have too
/// many parameters to probe exhaustively.
pub fn grad_check_f32_vs_f64_sampled(
    f: &impl GradFn,
    points: &[(Vec<usize>, Vec<f64>)],
    step: f64,
    max_probes: usize,
    probe_seed: u64,
) -> Result<f64> {
    let points32: Vec<Tensor<f32>> = points
        .iter()
        .map(|(shape, data)| Tensor::param(shape, data.iter().map(|&v| v as f32).collect()))
        .collect::<Result<_>>()?;
    let loss = f.call(&points32)?;
    if !loss.item().is_finite() {
        return Err(Error::Numeric(format!(
            "grad_check: non-finite function value {}",
            loss.item()
        )));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = points32
        .iter()
        .map(|p| {
            p.grad()
                .map(|g| g.iter().map(|&v| v as f64).collect())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let points64: Vec<Tensor<f64>> = points
        .iter()
        .map(|(shape, data)| Tensor::param(shape, data.clone()))
        .collect::<Result<_>>()?;

    let mut probes: Vec<(usize, usize)> = Vec::new();
    for (pi, (_, data)) in points.iter().enumerate() {
        for idx in 0..data.len() {
            probes.push((pi, idx));
        }
    }
    if probes.len() > max_probes {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::rng_for(probe_seed, "grad-probes", 0);
        probes.shuffle(&mut rng);
        probes.truncate(max_probes);
    }

    let mut max_rel = 0.0_f64;
    for (pi, idx) in probes {
        let point = &points64[pi];
        let orig = point.data()[idx];
        point.update_data(|d| d[idx] = orig + step);
        let plus = f.call(&points64)?.item();
        point.update_data(|d| d[idx] = orig - step);
        let minus = f.call(&points64)?.item();
        point.update_data(|d| d[idx] = orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric("grad_check: non-finite probe value".into()));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[pi][idx];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Compares the backward-pass gradient of a scalar-valued function
/// against central finite differences, component by component.
///
/// Returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`. The function is re-evaluated on a
/// fresh graph for every probe, so it must be pure in its inputs.
pub fn grad_check<T: Scalar, F>(f: F, points: &[Tensor<T>], step: f64) -> Result<f64>
where
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    grad_check_sampled(f, points, step, usize::MAX, 0)
}

/// [`grad_check`] probing at most `max_probes` components, chosen by a
/// seeded shuffle.
pub fn grad_check_sampled<T: Scalar, F>(
    f: F,
    points: &[Tensor<T>],
    step: f64,
    max_probes: usize,
    probe_seed: u64,
) -> Result<f64>
where
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    for p in points {
        p.zero_grad();
    }
    let loss = f(points)?;
    if !loss.item().is_finite() {
        return Err(Error::Numeric(format!(
            "grad_check: non-finite function value {}",
            loss.item()
        )));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            p.grad()
                .map(|g| g.iter().map(|&v| v.f64()).collect())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let eval = |points: &[Tensor<T>]| -> Result<f64> {
        let v = f(points)?.item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "grad_check: non-finite probe value {v}"
            )));
        }
        Ok(v.f64())
    };

    let mut probes: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        for idx in 0..p.numel() {
            probes.push((pi, idx));
        }
    }
    if probes.len() > max_probes {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::rng_for(probe_seed, "grad-probes", 1);
        probes.shuffle(&mut rng);
        probes.truncate(max_probes);
    }

    let mut max_rel = 0.0_f64;
    for (pi, idx) in probes {
        let point = &points[pi];
        let orig = point.data()[idx];
        let h = T::of(step);

        point.update_data(|d| d[idx] = orig + h);
        let plus = eval(points)?;
        point.update_data(|d| d[idx] = orig - h);
        let minus = eval(points)?;
        point.update_data(|d| d[idx] = orig);

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[pi][idx];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
