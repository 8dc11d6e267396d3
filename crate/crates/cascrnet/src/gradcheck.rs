//! Central finite-difference gradient checking in double precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Seed for the coordinate subsample.
    pub seed: u64,
    /// Coordinates checked per parameter tensor (all coordinates when the
    /// tensor is smaller).
    pub coords_per_param: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            seed: 0,
            coords_per_param: 32,
        }
    }
}

/// Worst coordinate seen for one parameter.
#[derive(Clone, Debug)]
pub struct CoordReport {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<CoordReport>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub max_rel_err: f64,
    /// Coordinates excluded by the caller's kink predicate, as (param, coord).
    pub skipped: Vec<(String, usize)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    pub fn worst(&self) -> Option<&CoordReport> {
        self.params
            .iter()
            .filter_map(|p| p.worst.as_ref())
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Compares analytic gradients against central differences
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` on a seeded coordinate subsample.
///
/// `params` are the checked tensors with their names; `analytic` must supply a
/// gradient of identical shape per name. `skip` marks coordinates to exclude
/// (non-differentiable points the caller knows about); exclusions are counted
/// and reported, never silently dropped. Relative error is
/// `|a−n| / max(1e−8, |a|+|n|)`; the report passes iff the maximum over all
/// checked coordinates is ≤ `tol`. A non-finite analytic or numeric value is a
/// hard failure naming the coordinate.
pub fn grad_check<F>(
    mut f: F,
    params: &[(String, Tensor<f64>)],
    analytic: &dyn Fn(&str) -> Option<Tensor<f64>>,
    skip: Option<&dyn Fn(&str, usize) -> bool>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[(String, Tensor<f64>)]) -> Result<f64>,
{
    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    let mut all_skipped = Vec::new();
    let mut global_max = 0.0f64;

    for pi in 0..work.len() {
        let name = work[pi].0.clone();
        let grad = analytic(&name).ok_or_else(|| {
            Error::contract(format!("no analytic gradient supplied for parameter '{name}'"))
        })?;
        if grad.shape() != work[pi].1.shape() {
            return Err(Error::contract(format!(
                "analytic gradient shape {:?} does not match parameter '{name}' {:?}",
                grad.shape(),
                work[pi].1.shape()
            )));
        }

        let numel = work[pi].1.numel();
        let coords = sample_coords(numel, cfg.coords_per_param, cfg.seed, pi as u64);

        let mut checked = 0usize;
        let mut skipped = 0usize;
        let mut max_rel = 0.0f64;
        let mut worst: Option<CoordReport> = None;

        for coord in coords {
            if let Some(pred) = skip {
                if pred(&name, coord) {
                    skipped += 1;
                    all_skipped.push((name.clone(), coord));
                    continue;
                }
            }
            let original = work[pi].1.data()[coord];

            work[pi].1.data_mut()[coord] = original + cfg.eps;
            let f_plus = f(&work)?;
            work[pi].1.data_mut()[coord] = original - cfg.eps;
            let f_minus = f(&work)?;
            work[pi].1.data_mut()[coord] = original;

            let numeric = (f_plus - f_minus) / (2.0 * cfg.eps);
            let a = grad.data()[coord];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::non_finite(format!(
                    "gradient check of '{name}' coordinate {coord}: analytic {a}, numeric {numeric}"
                )));
            }
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some(CoordReport {
                    param: name.clone(),
                    coord,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }

        global_max = global_max.max(max_rel);
        reports.push(ParamReport {
            name,
            checked,
            skipped,
            max_rel_err: max_rel,
            worst,
        });
    }

    Ok(GradCheckReport {
        params: reports,
        max_rel_err: global_max,
        skipped: all_skipped,
        tol: cfg.tol,
    })
}

/// Seeded subsample of `k` distinct coordinates (all of them when `numel <= k`),
/// returned in ascending order.
fn sample_coords(numel: usize, k: usize, seed: u64, stream: u64) -> Vec<usize> {
    if numel <= k {
        return (0..numel).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    let mut picked = rand::seq::index::sample(&mut rng, numel, k).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_for_central_differences() {
        // f = Σx² at θ = [3]: analytic 6, numeric 6 within 1e−9.
        let params = vec![("theta".to_string(), Tensor::new(vec![1], vec![3.0]).unwrap())];
        let grad = Tensor::new(vec![1], vec![6.0]).unwrap();
        let report = grad_check(
            |p| Ok(p[0].1.data().iter().map(|x| x * x).sum()),
            &params,
            &|name| (name == "theta").then(|| grad.clone()),
            None,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass());
        let worst = report.worst().unwrap();
        assert!((worst.numeric - 6.0).abs() < 1e-9);
        assert!((worst.analytic - 6.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_analytic_gradient_fails() {
        let params = vec![("theta".to_string(), Tensor::new(vec![1], vec![3.0]).unwrap())];
        let grad = Tensor::new(vec![1], vec![5.0]).unwrap(); // truth is 6
        let report = grad_check(
            |p| Ok(p[0].1.data().iter().map(|x| x * x).sum()),
            &params,
            &|_| Some(grad.clone()),
            None,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.pass());
    }

    #[test]
    fn kink_coordinates_are_skipped_and_reported() {
        // leaky_relu has a kink at 0; coordinate 1 sits within 1e−6 of it.
        let alpha = 0.01;
        let theta = Tensor::<f64>::new(vec![3], vec![1.0, 1e-9, -2.0]).unwrap();
        let params = vec![("x".to_string(), theta.clone())];
        let grad = Tensor::new(
            vec![3],
            theta
                .data()
                .iter()
                .map(|&x| if x > 0.0 { 1.0 } else { alpha })
                .collect(),
        )
        .unwrap();
        let near_kink = |name: &str, coord: usize| name == "x" && theta.data()[coord].abs() < 1e-6;
        let report = grad_check(
            |p| {
                Ok(p[0]
                    .1
                    .data()
                    .iter()
                    .map(|&x| if x > 0.0 { x } else { alpha * x })
                    .sum())
            },
            &params,
            &|_| Some(grad.clone()),
            Some(&near_kink),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass());
        assert_eq!(report.skipped, vec![("x".to_string(), 1)]);
        assert_eq!(report.params[0].checked, 2);
    }

    #[test]
    fn coordinate_subsample_is_seeded_and_deterministic() {
        let a = sample_coords(1000, 32, 7, 0);
        let b = sample_coords(1000, 32, 7, 0);
        let c = sample_coords(1000, 32, 8, 0);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 32);
        assert_eq!(sample_coords(10, 32, 7, 0), (0..10).collect::<Vec<_>>());
    }
}
