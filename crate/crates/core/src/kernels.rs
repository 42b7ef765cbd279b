//! Weight functions between units: evaluation, decreasing envelopes and the
//! integral transforms used by the simulator, the solvers and the stability
//! checks.
//!
//! An Erlang kernel is `h(t) = b * t^n / n! * exp(-nu t)`; its envelope is the
//! smallest non-increasing function dominating `|h|`, which is `|h|` itself
//! past the mode `n/nu` and constant before it. Piecewise-constant kernels use
//! the right-continuous step convention so they pair with Stieltjes
//! integration over `(a, b]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, bisect};

/// Maximum supported Erlang order.
pub const MAX_ERLANG_ORDER: u32 = 64;

/// Relative envelope level at which a kernel is truncated to zero.
const TRUNCATION_LEVEL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelKind {
    /// `b * t^n / n! * exp(-nu t)`.
    Erlang { b: f64, nu_per_time: f64, n: u32 },
    /// `values[i]` on `[grid_times[i], grid_times[i+1])`, zero outside.
    /// `grid_times` are the `values.len() + 1` cell edges.
    PiecewiseConstant {
        grid_times: Vec<f64>,
        values: Vec<f64>,
    },
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub kind: KernelKind,
    /// Time beyond which the kernel is treated as exactly zero. Filled with a
    /// default during validation when absent from the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_horizon_time: Option<f64>,
}

/// Report of the stability integrability conditions: the envelope must lie in
/// L1 and L2 and `t |h(t)|` in L1.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    pub l1_envelope: f64,
    pub l2_envelope: f64,
    pub t_weighted_l1: f64,
    pub pass: bool,
}

impl KernelSpec {
    pub fn erlang(b: f64, nu: f64, n: u32) -> Result<Self> {
        if !(nu > 0.0) || !b.is_finite() {
            return Err(Error::Config(format!(
                "erlang kernel needs finite b and nu > 0, got b={b}, nu={nu}"
            )));
        }
        if n > MAX_ERLANG_ORDER {
            return Err(Error::Config(format!(
                "erlang order {n} exceeds supported maximum {MAX_ERLANG_ORDER}"
            )));
        }
        let mut k = KernelSpec {
            kind: KernelKind::Erlang {
                b,
                nu_per_time: nu,
                n,
            },
            truncation_horizon_time: None,
        };
        k.fill_horizon();
        Ok(k)
    }

    pub fn piecewise_constant(grid_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid_times.len() != values.len() + 1 {
            return Err(Error::Config(format!(
                "piecewise kernel needs len(grid_times) == len(values) + 1, got {} and {}",
                grid_times.len(),
                values.len()
            )));
        }
        if grid_times.is_empty() || grid_times[0] < 0.0 {
            return Err(Error::Config("piecewise grid must start at t >= 0".into()));
        }
        if grid_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "piecewise grid must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("piecewise values must be finite".into()));
        }
        let mut k = KernelSpec {
            kind: KernelKind::PiecewiseConstant { grid_times, values },
            truncation_horizon_time: None,
        };
        k.fill_horizon();
        Ok(k)
    }

    pub fn zero() -> Self {
        KernelSpec {
            kind: KernelKind::Zero,
            truncation_horizon_time: Some(0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            KernelKind::Zero => true,
            KernelKind::Erlang { b, .. } => *b == 0.0,
            KernelKind::PiecewiseConstant { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }

    /// Populate the default truncation horizon when none was given: the
    /// smallest `t` with `envelope(t) <= 1e-12 * envelope(0)`, capped at
    /// `50/nu` for Erlang kernels.
    pub fn fill_horizon(&mut self) {
        if self.truncation_horizon_time.is_some() {
            return;
        }
        let horizon = match &self.kind {
            KernelKind::Zero => 0.0,
            KernelKind::PiecewiseConstant { grid_times, .. } => *grid_times.last().unwrap(),
            KernelKind::Erlang {
                b, nu_per_time, n, ..
            } => {
                if *b == 0.0 {
                    0.0
                } else {
                    let nu = *nu_per_time;
                    let n = *n;
                    let mode = n as f64 / nu;
                    let cap = 50.0 / nu;
                    let top = erlang_abs(1.0, nu, n, mode); // envelope at 0, for b = 1
                    let target = TRUNCATION_LEVEL * top;
                    if erlang_abs(1.0, nu, n, cap) > target {
                        cap
                    } else {
                        bisect(&|t| erlang_abs(1.0, nu, n, t) - target, mode, cap, 1e-9)
                    }
                }
            }
        };
        self.truncation_horizon_time = Some(horizon);
    }

    pub fn truncation_horizon(&self) -> f64 {
        match self.truncation_horizon_time {
            Some(h) => h,
            None => {
                let mut k = self.clone();
                k.fill_horizon();
                k.truncation_horizon_time.unwrap()
            }
        }
    }

    /// `h(t)`; zero past the truncation horizon.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("kernel eval needs t >= 0, got {t}")));
        }
        Ok(self.eval_raw(t))
    }

    /// `h(t)` assuming `t >= 0`.
    pub fn eval_raw(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        if t > self.truncation_horizon() {
            return 0.0;
        }
        match &self.kind {
            KernelKind::Zero => 0.0,
            KernelKind::Erlang { b, nu_per_time, n } => erlang_value(*b, *nu_per_time, *n, t),
            KernelKind::PiecewiseConstant { grid_times, values } => {
                if t < grid_times[0] || t >= *grid_times.last().unwrap() {
                    0.0
                } else {
                    // right-continuous step: values[i] on [g_i, g_{i+1})
                    let i = match grid_times.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
                        Ok(i) => i,
                        Err(i) => i - 1,
                    };
                    values[i.min(values.len() - 1)]
                }
            }
        }
    }

    /// Decreasing envelope `sup_{s >= t} |h(s)|`.
    pub fn envelope(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!(
                "kernel envelope needs t >= 0, got {t}"
            )));
        }
        Ok(self.envelope_raw(t))
    }

    /// Envelope assuming `t >= 0`.
    pub fn envelope_raw(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        if t > self.truncation_horizon() {
            return 0.0;
        }
        match &self.kind {
            KernelKind::Zero => 0.0,
            KernelKind::Erlang { b, nu_per_time, n } => erlang_abs(*b, *nu_per_time, *n, t),
            KernelKind::PiecewiseConstant { grid_times, values } => {
                // suffix max over the remaining cells
                let mut sup: f64 = 0.0;
                for (i, v) in values.iter().enumerate() {
                    if grid_times[i + 1] > t {
                        sup = sup.max(v.abs());
                    }
                }
                sup
            }
        }
    }

    /// `int_a^b h(t) dt`, closed form. `b` may be infinite. The Erlang form is
    /// not truncated here: with the default horizon the discarded tail is
    /// below 1e-12 relative.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if !(a >= 0.0) || b < a {
            return Err(Error::Domain(format!(
                "kernel integral needs 0 <= a <= b, got [{a}, {b}]"
            )));
        }
        match &self.kind {
            KernelKind::Zero => Ok(0.0),
            KernelKind::Erlang { b: amp, nu_per_time, n } => {
                let nu = *nu_per_time;
                let scale = amp / nu.powi(*n as i32 + 1);
                Ok(scale * (erlang_tail(nu, *n, a) - erlang_tail(nu, *n, b)))
            }
            KernelKind::PiecewiseConstant { grid_times, values } => {
                let mut total = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let lo = grid_times[i].max(a);
                    let hi = grid_times[i + 1].min(b);
                    if hi > lo {
                        total += v * (hi - lo);
                    }
                }
                Ok(total)
            }
        }
    }

    /// `int_0^infty h`.
    pub fn total_integral(&self) -> f64 {
        self.integral(0.0, f64::INFINITY).unwrap()
    }

    /// Sum of the envelope over the arithmetic grid `a + k*step, k >= 0`.
    /// Finite because the envelope vanishes past the truncation horizon.
    pub fn envelope_series(&self, a: f64, step: f64) -> Result<f64> {
        if !(step > 0.0) || !(a >= 0.0) {
            return Err(Error::Domain(format!(
                "envelope series needs a >= 0 and step > 0, got a={a}, step={step}"
            )));
        }
        let horizon = self.truncation_horizon();
        let mut total = 0.0;
        let mut t = a;
        while t <= horizon {
            total += self.envelope_raw(t);
            t += step;
        }
        Ok(total)
    }

    /// Numerically integrates the envelope, its square and `t |h(t)|` over
    /// `[0, truncation_horizon]`.
    pub fn integrability_check(&self) -> IntegrabilityReport {
        let horizon = self.truncation_horizon();
        let (l1, l2, tw) = match &self.kind {
            KernelKind::Zero => (0.0, 0.0, 0.0),
            KernelKind::PiecewiseConstant { grid_times, values } => {
                let mut l1 = 0.0;
                let mut l2 = 0.0;
                let mut tw = 0.0;
                for (i, _) in values.iter().enumerate() {
                    let (lo, hi) = (grid_times[i], grid_times[i + 1]);
                    let env_lo = self.envelope_raw(lo);
                    // envelope is constant on each cell given the suffix-max form
                    l1 += env_lo * (hi - lo);
                    l2 += env_lo * env_lo * (hi - lo);
                    tw += self.eval_raw(lo).abs() * 0.5 * (hi * hi - lo * lo);
                }
                (l1, l2, tw)
            }
            KernelKind::Erlang { .. } => {
                if horizon == 0.0 {
                    (0.0, 0.0, 0.0)
                } else {
                    let l1 = adaptive_simpson(&|t| self.envelope_raw(t), 0.0, horizon, 1e-11);
                    let l2 = adaptive_simpson(
                        &|t| {
                            let e = self.envelope_raw(t);
                            e * e
                        },
                        0.0,
                        horizon,
                        1e-11,
                    );
                    let tw =
                        adaptive_simpson(&|t| t * self.eval_raw(t).abs(), 0.0, horizon, 1e-11);
                    (l1, l2, tw)
                }
            }
        };
        IntegrabilityReport {
            l1_envelope: l1,
            l2_envelope: l2,
            t_weighted_l1: tw,
            pass: l1.is_finite() && l2.is_finite() && tw.is_finite(),
        }
    }
}

fn erlang_value(b: f64, nu: f64, n: u32, t: f64) -> f64 {
    // b * t^n / n! * exp(-nu t), with the power/factorial as a running product
    let mut p = 1.0;
    for m in 1..=n {
        p *= t / m as f64;
    }
    b * p * (-nu * t).exp()
}

fn erlang_abs(b: f64, nu: f64, n: u32, t: f64) -> f64 {
    let mode = n as f64 / nu;
    erlang_value(b.abs(), nu, n, t.max(mode))
}

/// `int_x^infty nu^{n+1} t^n / n! e^{-nu t} dt = exp(-nu x) sum_{m<=n} (nu x)^m / m!`.
fn erlang_tail(nu: f64, n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if !x.is_finite() {
        return 0.0;
    }
    let y = nu * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..=n {
        term *= y / m as f64;
        sum += term;
    }
    sum * (-y).exp()
}

fn default_scale() -> f64 {
    1.0
}

/// Population-level kernel grid `h_{kl}` (target row `k`, source column `l`)
/// with the interaction normalization: `1/N` in mean-field mode, 1 otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelMatrix {
    pub entries: Vec<Vec<KernelSpec>>,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl KernelMatrix {
    pub fn new(entries: Vec<Vec<KernelSpec>>) -> Result<Self> {
        let m = KernelMatrix {
            entries,
            scale: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn zero(populations: usize) -> Self {
        KernelMatrix {
            entries: vec![vec![KernelSpec::zero(); populations]; populations],
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.entries.len();
        if k == 0 {
            return Err(Error::Config("kernel matrix is empty".into()));
        }
        for row in &self.entries {
            if row.len() != k {
                return Err(Error::Config(format!(
                    "kernel matrix must be square, got row of length {} in a {}-row matrix",
                    row.len(),
                    k
                )));
            }
            for entry in row {
                if !entry.integrability_check().pass {
                    return Err(Error::Config("kernel entry fails integrability".into()));
                }
            }
        }
        if !self.scale.is_finite() || self.scale < 0.0 {
            return Err(Error::Config(format!("bad kernel scale {}", self.scale)));
        }
        Ok(())
    }

    pub fn populations(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, target: usize, source: usize) -> &KernelSpec {
        &self.entries[target][source]
    }

    pub fn all_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|row| row.iter().all(|k| k.is_zero()))
    }

    /// Largest truncation horizon over all entries.
    pub fn max_horizon(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(|k| k.truncation_horizon())
            .fold(0.0, f64::max)
    }

    /// Fill default truncation horizons after deserialization.
    pub fn fill_horizons(&mut self) {
        for row in &mut self.entries {
            for k in row {
                k.fill_horizon();
            }
        }
    }

    /// Envelope of the summed kernel `sum_{i,j} |h_ij|` at unit level:
    /// population entries weighted by the source/target unit counts and the
    /// effective interaction scale.
    pub fn summed_envelope_scaled(&self, unit_counts: &[usize], t: f64, scale: f64) -> f64 {
        let mut total = 0.0;
        for (k, row) in self.entries.iter().enumerate() {
            for (l, kernel) in row.iter().enumerate() {
                total += (unit_counts[k] * unit_counts[l]) as f64 * scale * kernel.envelope_raw(t);
            }
        }
        total
    }
}
