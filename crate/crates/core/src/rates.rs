//! Rate functions `psi(x, a)` with their declared regularity constants.
//!
//! Constants are user-declared and verified by sampling, not inferred: the
//! Lipschitz bound `L`, the post-jump bound `K` on `[0, delta]`, and the
//! regeneration floor `psi >= c` for `|x| <= x_star, a >= a_star`. Thinning
//! correctness downstream leans on the sub-linear majorant `L (1 + |x|)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar maps used as the `f` part of rate functions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarMap {
    Constant { value: f64 },
    /// `cap / (1 + exp(-slope (x - center)))`.
    Logistic { cap: f64, slope: f64, center: f64 },
    /// `clamp(intercept + slope x, min, max)`.
    AffineClamped {
        intercept: f64,
        slope: f64,
        min: f64,
        max: f64,
    },
    /// `amplitude * exp(x)`, unbounded; for negative-rate misdeclarations in tests.
    Exponential { amplitude: f64 },
}

impl ScalarMap {
    pub fn constant(value: f64) -> Self {
        ScalarMap::Constant { value }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarMap::Constant { value } => *value,
            ScalarMap::Logistic { cap, slope, center } => {
                cap / (1.0 + (-slope * (x - center)).exp())
            }
            ScalarMap::AffineClamped {
                intercept,
                slope,
                min,
                max,
            } => (intercept + slope * x).clamp(*min, *max),
            ScalarMap::Exponential { amplitude } => amplitude * x.exp(),
        }
    }

    /// Supremum over all of R, when finite.
    pub fn upper_bound(&self) -> Option<f64> {
        match self {
            ScalarMap::Constant { value } => Some(*value),
            ScalarMap::Logistic { cap, .. } => Some(cap.max(0.0)),
            ScalarMap::AffineClamped { min, max, .. } => Some(max.max(*min)),
            ScalarMap::Exponential { .. } => None,
        }
    }

    pub fn validate_nonnegative(&self) -> Result<()> {
        let ok = match self {
            ScalarMap::Constant { value } => *value >= 0.0,
            ScalarMap::Logistic { cap, .. } => *cap >= 0.0,
            ScalarMap::AffineClamped { min, .. } => *min >= 0.0,
            ScalarMap::Exponential { amplitude } => *amplitude >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("scalar map can go negative".into()))
        }
    }
}

/// Bounded age modulation for the product form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgeMap {
    One,
    /// `1{a >= threshold}`.
    Indicator { threshold_time: f64 },
    /// 0 before `start`, 1 after `end`, linear in between.
    Ramp { start_time: f64, end_time: f64 },
}

impl AgeMap {
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            AgeMap::One => 1.0,
            AgeMap::Indicator { threshold_time } => {
                if a >= *threshold_time {
                    1.0
                } else {
                    0.0
                }
            }
            AgeMap::Ramp {
                start_time,
                end_time,
            } => ((a - start_time) / (end_time - start_time)).clamp(0.0, 1.0),
        }
    }
}

/// Runtime-supplied rate function, not expressible in config files.
#[derive(Clone)]
pub struct CustomRate(pub Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomRate(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateForm {
    /// `f(x) 1{a >= delta}`.
    HardRefractory { f: ScalarMap, delta_time: f64 },
    /// `f(x) g(a)` with bounded `g`.
    Product { f: ScalarMap, g: AgeMap },
    #[serde(skip)]
    Custom(CustomRate),
}

/// Doeblin-type regeneration constants: `psi(x, a) >= c` whenever
/// `|x| <= x_star` and `a >= a_star`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoeblinParams {
    pub c: f64,
    pub a_star_time: f64,
    pub x_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    #[serde(flatten)]
    pub form: RateForm,
    pub lipschitz_l: f64,
    pub postjump_bound_k: f64,
    pub postjump_window_delta_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doeblin: Option<DoeblinParams>,
}

/// Worst violation margins from the sampling validator; a margin above zero
/// means the corresponding declaration failed on some sample.
#[derive(Debug, Clone, Serialize)]
pub struct RateValidation {
    pub nonnegativity_margin: f64,
    pub postjump_margin: f64,
    pub lipschitz_margin: f64,
    pub doeblin_margin: f64,
    pub pass: bool,
}

impl RateSpec {
    pub fn hard_refractory(f: ScalarMap, delta: f64, lipschitz_l: f64) -> Result<Self> {
        f.validate_nonnegative()?;
        let k = match f.upper_bound() {
            Some(_) if delta > 0.0 => 0.0, // psi vanishes on [0, delta)
            _ => 0.0,
        };
        let spec = RateSpec {
            form: RateForm::HardRefractory {
                f,
                delta_time: delta,
            },
            lipschitz_l,
            postjump_bound_k: k,
            postjump_window_delta_time: delta,
            doeblin: None,
        };
        spec.check_constants()?;
        Ok(spec)
    }

    pub fn with_doeblin(mut self, c: f64, a_star: f64, x_star: f64) -> Self {
        self.doeblin = Some(DoeblinParams {
            c,
            a_star_time: a_star,
            x_star,
        });
        self
    }

    pub fn custom(
        psi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        lipschitz_l: f64,
        postjump_bound_k: f64,
        postjump_window_delta: f64,
    ) -> Result<Self> {
        let spec = RateSpec {
            form: RateForm::Custom(CustomRate(Arc::new(psi))),
            lipschitz_l,
            postjump_bound_k,
            postjump_window_delta_time: postjump_window_delta,
            doeblin: None,
        };
        spec.check_constants()?;
        Ok(spec)
    }

    pub fn check_constants(&self) -> Result<()> {
        if !(self.lipschitz_l >= 1.0) {
            return Err(Error::Config(format!(
                "lipschitz_l must be >= 1, got {}",
                self.lipschitz_l
            )));
        }
        if self.postjump_window_delta_time < 0.0 || !self.postjump_bound_k.is_finite() {
            return Err(Error::Config("bad post-jump constants".into()));
        }
        if let RateForm::HardRefractory { f, .. } | RateForm::Product { f, .. } = &self.form {
            f.validate_nonnegative()?;
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.postjump_window_delta_time
    }

    /// `psi(x, a)`. Negative values from a custom map are the caller's
    /// responsibility to reject (the simulator aborts on them).
    pub fn psi(&self, x: f64, a: f64) -> f64 {
        match &self.form {
            RateForm::HardRefractory { f, delta_time } => {
                if a >= *delta_time {
                    f.eval(x)
                } else {
                    0.0
                }
            }
            RateForm::Product { f, g } => f.eval(x) * g.eval(a),
            RateForm::Custom(c) => (c.0)(x, a),
        }
    }

    /// Upper bound for `psi(x, a)` over all ages and `|x| <= x_abs`:
    /// `L (1 + x_abs)`, tightened by the declared cap when `f` is bounded.
    pub fn sublinear_majorant(&self, x_abs: f64) -> f64 {
        debug_assert!(x_abs >= 0.0);
        let linear = self.lipschitz_l * (1.0 + x_abs);
        match self.bounded_cap() {
            Some(cap) => linear.min(cap),
            None => linear,
        }
    }

    /// Global bound on `psi` when the form declares one.
    pub fn bounded_cap(&self) -> Option<f64> {
        match &self.form {
            RateForm::HardRefractory { f, .. } => f.upper_bound(),
            RateForm::Product { f, .. } => f.upper_bound(), // g <= 1 for all variants
            RateForm::Custom(_) => None,
        }
    }

    pub fn is_hard_refractory(&self) -> bool {
        matches!(self.form, RateForm::HardRefractory { .. })
    }

    /// Ages at which `psi(., a)` is non-smooth, for piecewise quadrature of
    /// the compensator.
    pub fn age_breakpoints(&self) -> Vec<f64> {
        match &self.form {
            RateForm::HardRefractory { delta_time, .. } if *delta_time > 0.0 => {
                vec![*delta_time]
            }
            RateForm::Product { g, .. } => match g {
                AgeMap::One => vec![],
                AgeMap::Indicator { threshold_time } => vec![*threshold_time],
                AgeMap::Ramp {
                    start_time,
                    end_time,
                } => vec![*start_time, *end_time],
            },
            _ => vec![],
        }
    }

    /// Monte-Carlo check of the declared invariants on a randomized grid.
    /// Returns worst margins; report-only.
    pub fn validate(&self, sample_count: usize, seed: u64) -> RateValidation {
        assert!(sample_count >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_7465);
        let x_span = 10.0
            * (1.0
                + self
                    .doeblin
                    .as_ref()
                    .map(|d| d.x_star.abs())
                    .unwrap_or(1.0));
        let delta = self.postjump_window_delta_time;
        let mut nonneg: f64 = f64::NEG_INFINITY;
        let mut postjump: f64 = f64::NEG_INFINITY;
        let mut lipschitz: f64 = f64::NEG_INFINITY;
        let mut doeblin: f64 = f64::NEG_INFINITY;
        for _ in 0..sample_count {
            let x = rng.gen_range(-x_span..x_span);
            let x2 = rng.gen_range(-x_span..x_span);
            let a = rng.gen_range(0.0..10.0 * (1.0 + delta));
            let v = self.psi(x, a);
            nonneg = nonneg.max(-v);
            lipschitz = lipschitz
                .max((v - self.psi(x2, a)).abs() - self.lipschitz_l * (x - x2).abs());
            if delta > 0.0 {
                let a_in = rng.gen_range(0.0..delta);
                postjump = postjump.max(self.psi(x, a_in) - self.postjump_bound_k);
            } else {
                postjump = postjump.max(0.0);
            }
            if let Some(d) = &self.doeblin {
                let xs = rng.gen_range(-d.x_star..d.x_star.max(1e-300));
                let al = d.a_star_time + rng.gen_range(0.0..10.0 * (1.0 + d.a_star_time));
                doeblin = doeblin.max(d.c - self.psi(xs, al));
            } else {
                doeblin = doeblin.max(0.0);
            }
        }
        let tol = 1e-9;
        RateValidation {
            nonnegativity_margin: nonneg,
            postjump_margin: postjump,
            lipschitz_margin: lipschitz,
            doeblin_margin: doeblin,
            pass: nonneg <= tol && postjump <= tol && lipschitz <= tol && doeblin <= tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hard_one() -> RateSpec {
        RateSpec::hard_refractory(ScalarMap::constant(1.0), 1.0, 1.0).unwrap()
    }

    #[test]
    fn hard_refractory_eval() {
        let r = hard_one();
        assert_eq!(r.psi(5.0, 0.5), 0.0);
        assert_eq!(r.psi(5.0, 2.0), 1.0);
        let c = RateSpec::custom(|_, _| 2.0, 1.0, 2.0, 0.0).unwrap();
        assert_eq!(c.psi(0.0, 0.0), 2.0);
    }

    #[test]
    fn hard_refractory_vanishes_inside_window() {
        // assumption (2.1) holds automatically with K = 0 on [0, delta)
        let r = hard_one();
        for i in 0..100 {
            let a = i as f64 * 0.00999;
            for x in [-50.0, -1.0, 0.0, 3.0, 1e6] {
                assert_eq!(r.psi(x, a), 0.0);
            }
        }
        assert_eq!(r.postjump_bound_k, 0.0);
    }

    #[test]
    fn majorant_examples() {
        let c = RateSpec::custom(|_, _| 0.5, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(c.sublinear_majorant(0.0), 1.0);
        let c2 = RateSpec::custom(|_, _| 0.5, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(c2.sublinear_majorant(3.0), 8.0);
        // bounded f tightens the majorant; grid-max of psi stays below it
        let f = ScalarMap::Logistic {
            cap: 2.0,
            slope: 1.0,
            center: 0.0,
        };
        let r = RateSpec::hard_refractory(f, 1.0, 2.0).unwrap();
        let m = r.sublinear_majorant(100.0);
        assert_eq!(m, 2.0);
        let grid_max = (0..2000)
            .map(|i| r.psi(-100.0 + i as f64 * 0.1, 5.0))
            .fold(0.0, f64::max);
        assert!(grid_max <= m + 1e-12);
    }

    #[test]
    fn validation_passes_for_honest_declaration() {
        let r = hard_one().with_doeblin(1.0, 2.0, 10.0);
        let v = r.validate(20_000, 3);
        assert!(v.pass, "{v:?}");
    }

    #[test]
    fn validation_catches_lipschitz_lie() {
        // f(x) = e^x declared 1-Lipschitz: finite-difference slope blows up
        let r = RateSpec {
            form: RateForm::HardRefractory {
                f: ScalarMap::Exponential { amplitude: 1.0 },
                delta_time: 1.0,
            },
            lipschitz_l: 1.0,
            postjump_bound_k: 0.0,
            postjump_window_delta_time: 1.0,
            doeblin: None,
        };
        let v = r.validate(20_000, 3);
        assert!(v.lipschitz_margin > 0.0);
        assert!(!v.pass);
    }

    #[test]
    fn validation_catches_doeblin_lie() {
        let r = RateSpec::custom(|_, _| 0.0, 1.0, 0.0, 1.0)
            .unwrap()
            .with_doeblin(0.5, 1.0, 1.0);
        let v = r.validate(1000, 5);
        assert!(v.doeblin_margin >= 0.5 - 1e-12);
        assert!(!v.pass);
    }

    #[test]
    fn mixed_lipschitz_condition_on_equal_ages() {
        let f = ScalarMap::Logistic {
            cap: 3.0,
            slope: 1.0,
            center: 0.0,
        };
        // L = 3 dominates the logistic slope cap*s/4 = 0.75
        let r = RateSpec::hard_refractory(f, 0.5, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5000 {
            let (x, x2) = (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
            let a = rng.gen_range(0.0..5.0);
            assert!((r.psi(x, a) - r.psi(x2, a)).abs() <= 3.0 * (x - x2).abs() + 1e-12);
        }
    }

    #[test]
    fn delta_zero_is_plain_hawkes() {
        let r = RateSpec::hard_refractory(ScalarMap::constant(2.0), 0.0, 1.0).unwrap();
        assert_eq!(r.psi(0.0, 0.0), 2.0);
        assert_eq!(r.delta(), 0.0);
    }
}
