//! Markovian completion of Erlang-kernel memory.
//!
//! For `h(t) = b t^n / n! exp(-nu t)` the convolution `X_t = int h(t-s) Z(ds)`
//! is the first coordinate of the linear system
//! `dX^(k) = -nu X^(k) dt + X^(k+1) dt` (k < n), `dX^(n) = -nu X^(n) dt + b Z(dt)`.
//! The flow between events is a Jordan block and is applied in closed form:
//! `X^(k)(t+s) = exp(-nu s) * sum_{m<=n-k} s^m/m! X^(k+m)(t)`, so no integrator
//! tolerance enters the memory path.

use crate::error::{Error, Result};
use crate::kernels::MAX_ERLANG_ORDER;

#[derive(Debug, Clone)]
pub struct CascadeState {
    /// `X^(0)..X^(n)`; an event adds `b` to the last coordinate only.
    pub coords: Vec<f64>,
    pub nu: f64,
    pub b: f64,
    pub last_update: f64,
}

impl CascadeState {
    pub fn new(b: f64, nu: f64, n: u32) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Config(format!("cascade needs nu > 0, got {nu}")));
        }
        if n > MAX_ERLANG_ORDER {
            return Err(Error::Config(format!(
                "cascade order {n} exceeds supported maximum {MAX_ERLANG_ORDER}"
            )));
        }
        Ok(CascadeState {
            coords: vec![0.0; n as usize + 1],
            nu,
            b,
            last_update: 0.0,
        })
    }

    /// Initialize from a point measure on `(-inf, 0]`:
    /// `X^(k)(0) = b * sum_s (-s)^{n-k}/(n-k)! * exp(nu s)`.
    pub fn init_from_point_measure(b: f64, nu: f64, n: u32, times: &[f64]) -> Result<Self> {
        let mut state = CascadeState::new(b, nu, n)?;
        for &s in times {
            if s > 0.0 {
                return Err(Error::Domain(format!(
                    "initial point measure must live on times <= 0, got {s}"
                )));
            }
            let decay = (nu * s).exp();
            let mut pow = 1.0; // (-s)^j / j!
            for j in 0..=n as usize {
                // coordinate k = n - j picks up (-s)^j / j!
                state.coords[n as usize - j] += b * pow * decay;
                pow *= -s / (j + 1) as f64;
            }
        }
        Ok(state)
    }

    pub fn order(&self) -> usize {
        self.coords.len() - 1
    }

    /// Memory value `X^(0)`.
    pub fn x0(&self) -> f64 {
        self.coords[0]
    }

    /// Closed-form flow by `dt` with no events.
    pub fn advance(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0);
        if dt == 0.0 {
            return;
        }
        let n = self.order();
        let decay = (-self.nu * dt).exp();
        let mut next = vec![0.0; n + 1];
        for (k, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut pow = 1.0; // dt^m / m!
            for m in 0..=(n - k) {
                acc += pow * self.coords[k + m];
                pow *= dt / (m + 1) as f64;
            }
            *slot = decay * acc;
        }
        self.coords = next;
        self.last_update += dt;
    }

    /// Advance to an absolute time at or after `last_update`.
    pub fn advance_to(&mut self, t: f64) {
        let dt = t - self.last_update;
        debug_assert!(dt >= -1e-12, "advance_to moved backwards by {dt}");
        if dt > 0.0 {
            self.advance(dt);
        }
        self.last_update = t;
    }

    /// Jump of the driving process: adds `b` to `X^(n)`.
    pub fn on_event(&mut self) {
        let n = self.order();
        self.coords[n] += self.b;
    }

    /// Add mass `m` of the driving measure (`b * m` lands on `X^(n)`); used by
    /// the deterministic limit dynamics where `Z(dt)` is replaced by a rate.
    pub fn add_mass(&mut self, m: f64) {
        let n = self.order();
        self.coords[n] += self.b * m;
    }

    /// `X^(0)` a lag `dt >= 0` ahead of `last_update`, without mutating.
    pub fn peek_x0(&self, dt: f64) -> f64 {
        debug_assert!(dt >= 0.0);
        if dt == 0.0 {
            return self.coords[0];
        }
        let n = self.order();
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 0..=n {
            acc += pow * self.coords[m];
            pow *= dt / (m + 1) as f64;
        }
        (-self.nu * dt).exp() * acc
    }

    /// Upper bound for `|X^(0)|` over the lookahead `[0, w]`: since
    /// `exp(-nu s) <= 1` and `s^m <= w^m`, the triangle inequality gives
    /// `sum_m w^m/m! |X^(m)|`.
    pub fn x0_window_bound(&self, w: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 0..=self.order() {
            acc += pow * self.coords[m].abs();
            pow *= w / (m + 1) as f64;
        }
        acc
    }
}
