//! Conditional flow matching: the linear-path training objective and a
//! first-order Euler sampler.
//!
//! Path convention: `t = 0` at the data sample, `t = 1` at the noise sample,
//! so `x_t = (1 - t) * data + t * noise` and the regression target is the
//! constant path velocity `noise - data`. Sampling transports noise back to
//! data, which means integrating the *negated* learned velocity from the
//! noise end; [`euler_integrate`] itself is a plain forward integrator over
//! `t in [0, 1]` and the caller supplies the reversed field (see
//! `model::sample`).

use ndarray::ArrayD;

/// Errors from flow-matching operations.
#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("interpolation time {0} outside [0,1]")]
    BadTime(f64),
    #[error("velocity field produced a non-finite value at step {step} (t = {t})")]
    NonFiniteVelocity { step: usize, t: f64 },
    #[error("steps must be >= 1")]
    ZeroSteps,
}

/// One training example: clean data, a noise draw, and a path time.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub data: ArrayD<f64>,
    pub noise: ArrayD<f64>,
    pub t: f64,
}

impl FlowSample {
    pub fn new(data: ArrayD<f64>, noise: ArrayD<f64>, t: f64) -> Result<Self, FlowError> {
        if data.shape() != noise.shape() {
            return Err(FlowError::ShapeMismatch(
                data.shape().to_vec(),
                noise.shape().to_vec(),
            ));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(FlowError::BadTime(t));
        }
        Ok(Self { data, noise, t })
    }
}

/// Weight balancing the two branch losses: `total = loss_2d + beta * loss_3d`.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub beta: f64,
}

impl LossWeights {
    pub fn new(beta: f64) -> Self {
        assert!(beta >= 0.0, "beta must be nonnegative");
        Self { beta }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

/// A velocity field `v(x, t)`; output shape must equal the state shape.
pub trait VelocityField {
    fn velocity(&self, state: &ArrayD<f64>, t: f64) -> ArrayD<f64>;
}

impl<F> VelocityField for F
where
    F: Fn(&ArrayD<f64>, f64) -> ArrayD<f64>,
{
    fn velocity(&self, state: &ArrayD<f64>, t: f64) -> ArrayD<f64> {
        self(state, t)
    }
}

/// Point on the linear path and its (constant) target velocity.
pub fn interpolate_path(sample: &FlowSample) -> (ArrayD<f64>, ArrayD<f64>) {
    let x_t = &sample.data * (1.0 - sample.t) + &sample.noise * sample.t;
    let target_v = &sample.noise - &sample.data;
    (x_t, target_v)
}

/// Mean squared error between predicted and target velocities.
pub fn cfm_loss(pred_v: &ArrayD<f64>, target_v: &ArrayD<f64>) -> Result<f64, FlowError> {
    if pred_v.shape() != target_v.shape() {
        return Err(FlowError::ShapeMismatch(
            pred_v.shape().to_vec(),
            target_v.shape().to_vec(),
        ));
    }
    let n = pred_v.len().max(1) as f64;
    let sum: f64 = pred_v
        .iter()
        .zip(target_v.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n)
}

/// Joint objective over both branches.
pub fn joint_loss(loss_2d: f64, loss_3d: f64, w: &LossWeights) -> f64 {
    loss_2d + w.beta * loss_3d
}

/// Explicit Euler over `t in [0, 1]`:
/// `x_{k+1} = x_k + (1/steps) * field(x_k, k/steps)`.
///
/// Exact for fields constant in `(x, t)`; globally first-order otherwise.
/// Aborts with a diagnostic if the field returns a non-finite value.
pub fn euler_integrate<V: VelocityField + ?Sized>(
    field: &V,
    x_init: &ArrayD<f64>,
    steps: usize,
) -> Result<ArrayD<f64>, FlowError> {
    if steps == 0 {
        return Err(FlowError::ZeroSteps);
    }
    let dt = 1.0 / steps as f64;
    let mut x = x_init.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = field.velocity(&x, t);
        if v.iter().any(|a| !a.is_finite()) {
            return Err(FlowError::NonFiniteVelocity { step: k, t });
        }
        x = x + v * dt;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};

    fn arr(vals: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals.to_vec()).unwrap()
    }

    #[test]
    fn path_endpoints_are_exact() {
        let data = arr(&[1.0, -2.0, 0.5]);
        let noise = arr(&[0.3, 0.7, -1.1]);
        let (x0, _) = interpolate_path(&FlowSample::new(data.clone(), noise.clone(), 0.0).unwrap());
        assert_eq!(x0, data);
        let (x1, _) = interpolate_path(&FlowSample::new(data.clone(), noise.clone(), 1.0).unwrap());
        assert_eq!(x1, noise);
    }

    #[test]
    fn midpoint_of_zero_data() {
        let data = arr(&[0.0, 0.0]);
        let noise = arr(&[2.0, -4.0]);
        let (x, v) = interpolate_path(&FlowSample::new(data, noise.clone(), 0.5).unwrap());
        assert_eq!(x, arr(&[1.0, -2.0]));
        assert_eq!(v, noise);
    }

    #[test]
    fn sample_rejects_shape_mismatch_and_bad_t() {
        assert!(FlowSample::new(arr(&[1.0]), arr(&[1.0, 2.0]), 0.5).is_err());
        assert!(FlowSample::new(arr(&[1.0]), arr(&[2.0]), 1.5).is_err());
    }

    #[test]
    fn loss_zero_iff_equal() {
        let a = arr(&[0.1, 0.2, 0.3]);
        assert_eq!(cfm_loss(&a, &a).unwrap(), 0.0);
        let b = arr(&[0.1, 0.2, 0.3001]);
        assert!(cfm_loss(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn constant_offset_gives_squared_offset() {
        let t = arr(&[1.0, 2.0, 3.0, 4.0]);
        let p = &t + 0.5;
        let loss = cfm_loss(&p.into_dyn(), &t).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_scalar_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let p: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for i in 0..p.len() {
            let d = p[i] - t[i];
            acc += d * d;
        }
        let oracle = acc / p.len() as f64;
        let loss = cfm_loss(&arr(&p), &arr(&t)).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_arithmetic() {
        assert_eq!(joint_loss(1.0, 1.0, &LossWeights::new(1.0)), 2.0);
        assert_eq!(joint_loss(0.5, 2.0, &LossWeights::new(0.0)), 0.5);
        assert_eq!(joint_loss(0.5, 2.0, &LossWeights::new(2.0)), 4.5);
    }

    #[test]
    fn euler_exact_for_constant_field() {
        let c = arr(&[0.7, -0.3]);
        let field = |_x: &ArrayD<f64>, _t: f64| c.clone();
        for steps in [1usize, 5, 25] {
            let out = euler_integrate(&field, &arr(&[0.0, 0.0]), steps).unwrap();
            assert!((&out - &c).iter().all(|d| d.abs() < 1e-15), "steps={steps}");
        }
    }

    #[test]
    fn euler_first_order_convergence_on_exponential() {
        // dx/dt = x, x(0) = 1 -> x(1) = e; error should halve with steps.
        let field = |x: &ArrayD<f64>, _t: f64| x.clone();
        let x0 = arr(&[1.0]);
        let mut errors = Vec::new();
        for steps in [8usize, 16, 32, 64, 128] {
            let out = euler_integrate(&field, &x0, steps).unwrap();
            errors.push((out[[0]] - std::f64::consts::E).abs());
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (1.8..=2.2).contains(&ratio),
                "convergence ratio {ratio} not first-order"
            );
        }
    }

    #[test]
    fn euler_reaches_data_with_oracle_field() {
        let data = arr(&[0.2, -0.9, 1.4]);
        let x0 = arr(&[1.0, 1.0, 1.0]);
        let target = data.clone();
        let start = x0.clone();
        let field = move |_x: &ArrayD<f64>, _t: f64| (&target - &start).into_dyn();
        for steps in [1usize, 3, 17] {
            let out = euler_integrate(&field, &x0, steps).unwrap();
            assert!((&out - &data).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn non_finite_velocity_aborts() {
        let field = |_x: &ArrayD<f64>, t: f64| {
            if t > 0.4 {
                arr(&[f64::NAN])
            } else {
                arr(&[1.0])
            }
        };
        let err = euler_integrate(&field, &arr(&[0.0]), 10).unwrap_err();
        assert!(matches!(err, FlowError::NonFiniteVelocity { .. }));
    }
}
