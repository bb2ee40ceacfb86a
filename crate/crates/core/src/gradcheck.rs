//! Finite-difference gradient checking against analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheckConfig<T> {
    /// Central-difference step.
    pub h: T,
    /// Coordinates sampled per parameter tensor (all if the tensor is smaller).
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Absolute agreement below which a coordinate passes outright. Covers
    /// coordinates whose gradient sits at the finite-difference noise floor,
    /// where the relative error amplifies rounding instead of measuring
    /// correctness.
    pub abs_tol: T,
}

impl<T: Scalar> Default for GradCheckConfig<T> {
    fn default() -> Self {
        GradCheckConfig {
            h: T::from_f64(1e-4),
            samples_per_tensor: 8,
            seed: 0x6AD5,
            abs_tol: T::from_f64(1e-9),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport<T> {
    pub max_rel_error: T,
    pub checked: usize,
    /// Coordinates whose probe interval straddled a nondifferentiable point
    /// (one-sided slopes disagreed), where a central difference is invalid.
    pub skipped_kinks: usize,
    /// `(tensor index, flat coordinate, analytic, numeric)` for the worst case.
    pub worst: Option<(usize, usize, T, T)>,
}

/// Compares analytic gradients against central differences on a random
/// subset of coordinates. `loss` must be a pure function of the parameters;
/// any stochastic inputs have to be frozen by the caller.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`. A coordinate passes
/// outright when `|a - n| <= abs_tol`, and is skipped (counted in
/// `skipped_kinks`) when the two one-sided slopes disagree by more than a
/// quarter of their magnitude: the probe interval then straddles a ReLU
/// kink, so no step size makes the central difference meaningful there.
/// The skip decision uses only loss values, so a wrong analytic gradient
/// can never argue its own coordinate out of the comparison.
pub fn finite_diff_gradcheck<T, F>(
    params: &mut [Vec<T>],
    grads: &[Vec<T>],
    mut loss: F,
    config: &GradCheckConfig<T>,
) -> GradCheckReport<T>
where
    T: Scalar,
    F: FnMut(&[Vec<T>]) -> T,
{
    assert_eq!(params.len(), grads.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let floor = T::from_f64(1e-8);
    let kink_split = T::from_f64(0.25);
    let mut report = GradCheckReport {
        max_rel_error: T::zero(),
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let base = loss(params);
    for ti in 0..params.len() {
        let n = params[ti].len();
        assert_eq!(n, grads[ti].len());
        if n == 0 {
            continue;
        }
        let take = config.samples_per_tensor.min(n);
        let coords = sample(&mut rng, n, take);
        for ci in coords {
            let orig = params[ti][ci];
            params[ti][ci] = orig + config.h;
            let lp = loss(params);
            params[ti][ci] = orig - config.h;
            let lm = loss(params);
            params[ti][ci] = orig;
            let numeric = (lp - lm) / (T::from_f64(2.0) * config.h);
            let analytic = grads[ti][ci];
            if (analytic - numeric).abs() <= config.abs_tol {
                report.checked += 1;
                continue;
            }
            let fwd = (lp - base) / config.h;
            let bwd = (base - lm) / config.h;
            if (fwd - bwd).abs() > kink_split * fwd.abs().max(bwd.abs()) {
                report.skipped_kinks += 1;
                continue;
            }
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((ti, ci, analytic, numeric));
            }
        }
    }
    report
}

/// Largest per-coordinate deviation of `other` from `reference`, measured
/// relative to the containing tensor's own gradient scale (its max
/// absolute reference value, floored at 1e-8).
///
/// This is the right yardstick for comparing a reduced-precision gradient
/// against a trusted high-precision one: coordinates that are tiny through
/// cancellation carry absolute error proportional to the tensor's scale,
/// so a plain per-coordinate relative error would flag correct arithmetic.
pub fn tensor_scale_agreement(reference: &[Vec<f64>], other: &[Vec<f64>]) -> f64 {
    assert_eq!(reference.len(), other.len());
    let mut worst = 0.0f64;
    for (r, o) in reference.iter().zip(other) {
        assert_eq!(r.len(), o.len());
        let scale = r.iter().fold(1e-8f64, |m, &v| m.max(v.abs()));
        for (&rv, &ov) in r.iter().zip(o) {
            worst = worst.max((rv - ov).abs() / scale);
        }
    }
    worst
}
