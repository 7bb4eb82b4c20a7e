//! Fixed-step classical Runge–Kutta integration of [`Field`]s.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::{Field, GameFieldPair};
use crate::param::ParamVector;

/// States with a larger norm are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub substeps_per_h: usize,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { substeps_per_h: 64, method: Method::Rk4 }
    }
}

impl IntegratorConfig {
    pub fn with_substeps(substeps_per_h: usize) -> Self {
        Self { substeps_per_h, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps_per_h == 0 {
            return Err(Error::InvalidArgument("substeps_per_h must be at least 1".into()));
        }
        Ok(())
    }
}

/// Number of RK4 steps used for `total_time`: `ceil(total_time / h_unit)`
/// times `substeps_per_h`, where `h_unit` is the field's `h` (or the whole
/// interval when `h = 0`).
pub fn step_count(h: f64, total_time: f64, cfg: &IntegratorConfig) -> usize {
    if total_time == 0.0 {
        return 0;
    }
    let units = if h > 0.0 { (total_time / h - 1e-9).ceil().max(1.0) as usize } else { 1 };
    units * cfg.substeps_per_h
}

fn rk4_step(field: &dyn Field, x: &ParamVector, dt: f64) -> Result<ParamVector> {
    let k1 = field.eval(x)?;
    let k2 = field.eval(&x.axpy(dt / 2.0, &k1))?;
    let k3 = field.eval(&x.axpy(dt / 2.0, &k2))?;
    let k4 = field.eval(&x.axpy(dt, &k3))?;
    let mut out = x.clone();
    out.add_scaled_mut(dt / 6.0, &k1);
    out.add_scaled_mut(dt / 3.0, &k2);
    out.add_scaled_mut(dt / 3.0, &k3);
    out.add_scaled_mut(dt / 6.0, &k4);
    Ok(out)
}

/// Solution of `ẋ = field(x)` at `total_time` starting from `initial`.
pub fn integrate(field: &dyn Field, initial: &ParamVector, total_time: f64, cfg: &IntegratorConfig) -> Result<ParamVector> {
    cfg.validate()?;
    check_dim(field.dim(), initial.dim())?;
    if !(total_time.is_finite() && total_time >= 0.0) {
        return Err(Error::InvalidArgument(format!("total time must be finite and nonnegative, got {total_time}")));
    }
    let steps = step_count(field.h(), total_time, cfg);
    if steps == 0 {
        return Ok(initial.clone());
    }
    let dt = total_time / steps as f64;
    let mut x = initial.clone();
    for i in 0..steps {
        let time = (i + 1) as f64 * dt;
        x = match rk4_step(field, &x, dt) {
            Ok(next) => next,
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { time }),
            Err(e) => return Err(e),
        };
        if !x.is_finite() || x.norm() > DIVERGENCE_NORM {
            log::debug!("integration diverged after {} of {steps} steps", i + 1);
            return Err(Error::Divergence { time });
        }
    }
    Ok(x)
}

/// [`integrate`] on the stacked `(φ, θ)` system.
pub fn integrate_pair(
    pair: &GameFieldPair<'_>,
    phi: &ParamVector,
    theta: &ParamVector,
    total_time: f64,
    cfg: &IntegratorConfig,
) -> Result<(ParamVector, ParamVector)> {
    check_dim(pair.game().dim_phi(), phi.dim())?;
    check_dim(pair.game().dim_theta(), theta.dim())?;
    let z = integrate(pair, &phi.concat(theta), total_time, cfg)?;
    Ok(z.split_at(phi.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{igr_flow, simultaneous_gradient_field, FnField};
    use crate::problems::{make_bilinear_game, BatchSchedule, Problem, QuadraticExample, QuadraticProblem};
    use crate::harness::fit_slope;

    fn decay(h: f64) -> FnField<impl Fn(&ParamVector) -> ParamVector + Send + Sync> {
        FnField::new(1, h, |x: &ParamVector| x.neg())
    }

    #[test]
    fn exponential_decay() {
        let x = integrate(&decay(0.0), &ParamVector::scalar(1.0), 1.0, &IntegratorConfig::default()).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn zero_time_is_identity() {
        let x0 = ParamVector::from(vec![0.1 + 0.2, -3.7]);
        let f = FnField::new(2, 0.1, |x: &ParamVector| x.scaled(5.0));
        let x = integrate(&f, &x0, 0.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(x.as_slice(), x0.as_slice());
        assert!(integrate(&f, &x0, -1.0, &IntegratorConfig::default()).is_err());
        assert!(integrate(&f, &x0, 1.0, &IntegratorConfig::with_substeps(0)).is_err());
        assert!(integrate(&f, &ParamVector::zeros(3), 1.0, &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn igr_linear_closed_form() {
        let p = QuadraticProblem::from_parts(1, &[QuadraticExample::scalar(1.0, 0.0)]).unwrap();
        let h = 0.1;
        let f = igr_flow(&p, &BatchSchedule::single(p.full_batch()), h).unwrap();
        let x = integrate(&f, &ParamVector::scalar(1.0), h, &IntegratorConfig::default()).unwrap();
        assert!((x[0] - (-(1.0 + h / 2.0) * h).exp()).abs() < 1e-9);
    }

    #[test]
    fn step_count_rules() {
        let cfg = IntegratorConfig::default();
        assert_eq!(step_count(0.1, 0.3, &cfg), 3 * 64);
        assert_eq!(step_count(0.0, 7.0, &cfg), 64);
        assert_eq!(step_count(0.5, 0.0, &cfg), 0);
        assert_eq!(step_count(0.25, 0.1, &cfg), 64);
    }

    #[test]
    fn divergence_reports_time() {
        let f = FnField::new(1, 0.0, |x: &ParamVector| ParamVector::scalar(x[0] * x[0]));
        let err = integrate(&f, &ParamVector::scalar(1.0), 2.0, &IntegratorConfig::with_substeps(1000)).unwrap_err();
        match err {
            Error::Divergence { time } => assert!(time > 0.9 && time < 1.1, "{time}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn pair_rotation_and_zero_field() {
        let game = make_bilinear_game();
        let base = simultaneous_gradient_field(&game);
        let (p, t) = integrate_pair(&base, &ParamVector::scalar(1.0), &ParamVector::scalar(0.0), std::f64::consts::FRAC_PI_2, &IntegratorConfig::default()).unwrap();
        assert!(p[0].abs() < 1e-7 && (t[0] - 1.0).abs() < 1e-7);
        let (p, t) = integrate_pair(&base, &ParamVector::scalar(0.0), &ParamVector::scalar(0.0), 1.0, &IntegratorConfig::default()).unwrap();
        assert_eq!((p[0], t[0]), (0.0, 0.0));
    }

    fn pendulum(h: f64) -> FnField<impl Fn(&ParamVector) -> ParamVector + Send + Sync> {
        FnField::new(2, h, |x: &ParamVector| ParamVector::from(vec![x[1], -2.0 * x[0].sin() - 0.3 * x[1]]))
    }

    #[test]
    fn fourth_order_self_convergence() {
        let f = pendulum(0.0);
        let x0 = ParamVector::from(vec![1.2, 0.0]);
        let reference = integrate(&f, &x0, 3.0, &IntegratorConfig::with_substeps(256)).unwrap();
        let subs = [8usize, 16, 32, 64];
        let errs: Vec<f64> = subs
            .iter()
            .map(|&k| integrate(&f, &x0, 3.0, &IntegratorConfig::with_substeps(k)).unwrap().distance(&reference))
            .collect();
        let dts: Vec<f64> = subs.iter().map(|&k| 3.0 / k as f64).collect();
        let (slope, _, _) = fit_slope(&dts, &errs).unwrap();
        assert!(slope >= 3.8, "slope {slope}, errors {errs:?}");
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 12.0 && ratio < 20.0, "halving ratio {ratio}");
        }
    }

    #[test]
    fn time_additivity() {
        let f = pendulum(0.1);
        let cfg = IntegratorConfig::default();
        let x0 = ParamVector::from(vec![0.4, -0.2]);
        let whole = integrate(&f, &x0, 0.3, &cfg).unwrap();
        let split = integrate(&f, &integrate(&f, &x0, 0.1, &cfg).unwrap(), 0.2, &cfg).unwrap();
        assert!(whole.distance(&split) < 1e-9);
    }

    #[test]
    fn linear_reversibility() {
        let m = [[0.2, -1.0], [0.7, -0.4]];
        let fwd = FnField::new(2, 0.5, move |x: &ParamVector| {
            ParamVector::from(vec![m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]])
        });
        let back = FnField::new(2, 0.5, move |x: &ParamVector| {
            ParamVector::from(vec![-(m[0][0] * x[0] + m[0][1] * x[1]), -(m[1][0] * x[0] + m[1][1] * x[1])])
        });
        let cfg = IntegratorConfig::default();
        let x0 = ParamVector::from(vec![1.0, 0.5]);
        let there = integrate(&fwd, &x0, 1.5, &cfg).unwrap();
        let again = integrate(&back, &there, 1.5, &cfg).unwrap();
        assert!(again.distance(&x0) < 1e-8);
    }
}
