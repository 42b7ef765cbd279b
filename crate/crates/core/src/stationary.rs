//! Equilibrium analysis of the one-class mean-field limit: the fixed-point
//! equation for the stationary jump rate, the stationary age density, and the
//! refractory-length sweep.
//!
//! At equilibrium the memory freezes at `x* = lambda_bar * int h` (which is
//! `b / nu^{n+1} * lambda_bar` for an Erlang kernel) and the age becomes a
//! renewal process with stationary density
//! `g(a) = kappa exp(-int_0^a psi(x*, z) dz)`; the normalizer `kappa` equals
//! the jump rate, so `lambda_bar` solves
//! `1/lambda_bar = int_0^infty exp(-int_0^a psi(x*, z) dz) da`, which for the
//! hard refractory rate collapses to
//! `1/lambda_bar = delta + 1/f(lambda_bar * int h)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::bisect;
use crate::rates::{RateForm, RateSpec};

const EPS_RATE: f64 = 1e-12;
const BRACKET_GRID: usize = 400;

#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    /// Equilibrium jump rate.
    pub lambda_bar: f64,
    /// Equilibrium memory `lambda_bar * int h`.
    pub x_star: f64,
    /// Age-density normalizer; equals `lambda_bar` at a solution.
    pub kappa: f64,
    /// Fixed-point residual `|rhs(lambda) - 1/lambda|`.
    pub residual: f64,
    /// Bracket the root was isolated in.
    pub bracket: (f64, f64),
    /// All sign-change brackets found on the scan grid; more than one means
    /// the equation admits several candidate rates (possible for excitatory
    /// interaction) and `lambda_bar` is merely the smallest root.
    pub brackets: Vec<(f64, f64)>,
}

impl StationaryResult {
    pub fn unique(&self) -> bool {
        self.brackets.len() == 1
    }
}

/// Stationary age density on a grid, with the analytic exponential tail mass.
#[derive(Debug, Clone, Serialize)]
pub struct AgeDensity {
    pub kappa: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// `int_0^a psi(x*, z) dz` along the grid.
    pub hazard_integral: Vec<f64>,
    /// Rate used for the closed-form tail beyond the grid.
    pub tail_rate: f64,
}

impl AgeDensity {
    /// Total mass including the analytic tail; 1 up to quadrature error.
    pub fn total_mass(&self) -> f64 {
        let mut mass = 0.0;
        for (ts, hs) in self.grid.windows(2).zip(self.hazard_integral.windows(2)) {
            mass += self.kappa * exp_segment_mass(hs[0], hs[1], ts[1] - ts[0]);
        }
        mass + self.tail_mass()
    }

    pub fn tail_mass(&self) -> f64 {
        let last = *self.density.last().unwrap();
        if self.tail_rate > 0.0 {
            last / self.tail_rate
        } else {
            f64::INFINITY
        }
    }

    /// `int psi(x*, a) g(a) da`, which the change of variables
    /// `y = int_0^a psi` identifies with `kappa`.
    pub fn mean_hazard(&self, rate: &RateSpec, x_star: f64) -> f64 {
        let mut total = 0.0;
        for (ts, hs) in self.grid.windows(2).zip(self.hazard_integral.windows(2)) {
            let mid = 0.5 * (ts[0] + ts[1]);
            let seg = self.kappa * exp_segment_mass(hs[0], hs[1], ts[1] - ts[0]);
            total += rate.psi(x_star, mid) * seg;
        }
        // tail: int_A^inf psi g = g(A) since g' = -psi g there
        total + *self.density.last().unwrap()
    }
}

/// `int_0^dt exp(-(h0 + (h1 - h0) s / dt)) ds`: exact when the hazard rate is
/// constant on the segment, second-order accurate otherwise.
fn exp_segment_mass(h0: f64, h1: f64, dt: f64) -> f64 {
    let dh = h1 - h0;
    if dh.abs() < 1e-12 {
        dt * (-0.5 * (h0 + h1)).exp()
    } else {
        dt * (-h0).exp() * (-(-dh).exp_m1()) / dh
    }
}

/// Survival-integral helper: builds the age grid for `psi(x*, .)` and returns
/// `(grid, hazard integral, int_0^infty exp(-hazard))`, the latter including
/// the closed-form exponential tail.
fn survival_quadrature(rate: &RateSpec, x_star: f64) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    // grid to a* + 40/c: past every declared transient the hazard is
    // effectively constant and the tail closes analytically
    let delta = rate.delta();
    let a_star = rate
        .doeblin
        .as_ref()
        .map(|d| d.a_star_time)
        .unwrap_or(0.0)
        .max(delta);
    let tail_probe = rate.psi(x_star, a_star + 1e3);
    let c_floor = rate
        .doeblin
        .as_ref()
        .map(|d| d.c)
        .unwrap_or(tail_probe)
        .max(1e-6);
    let a_max = (a_star + 40.0 / c_floor).max(1.0);

    // uniform refractory part (capturing the jump at delta exactly on a
    // node), then a geometric stretch to a_max
    let mut grid = Vec::new();
    if delta > 0.0 {
        let n0 = 200;
        grid.extend((0..=n0).map(|i| delta * i as f64 / n0 as f64));
    } else {
        grid.push(0.0);
    }
    let start = *grid.last().unwrap();
    let remaining = a_max - start;
    if remaining > 0.0 {
        let n1 = 4000;
        let ratio: f64 = 1.001;
        let base = remaining * (ratio - 1.0) / (ratio.powi(n1) - 1.0);
        let mut t = start;
        let mut step = base;
        for _ in 0..n1 {
            t += step;
            grid.push(t.min(a_max));
            step *= ratio;
        }
    }

    // midpoint accumulation of the hazard integral: exact for rates constant
    // between nodes (the hard refractory family)
    let mut hazard = Vec::with_capacity(grid.len());
    hazard.push(0.0);
    let mut acc = 0.0;
    for w in grid.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let v = rate.psi(x_star, mid);
        if v < 0.0 {
            return Err(Error::Model(format!(
                "rate returned negative intensity at age {mid}"
            )));
        }
        acc += v * (w[1] - w[0]);
        hazard.push(acc);
    }

    let tail_rate = rate.psi(x_star, a_max);
    let mut survive = 0.0;
    for (w, h) in grid.windows(2).zip(hazard.windows(2)) {
        survive += exp_segment_mass(h[0], h[1], w[1] - w[0]);
    }
    let tail = if tail_rate > 1e-12 {
        (-acc).exp() / tail_rate
    } else if (-acc).exp() < 1e-300 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok((grid, hazard, survive + tail, tail_rate))
}

/// Right-hand side `int_0^infty exp(-int_0^a psi(x*, z) dz) da` of the fixed
/// point, the expected stationary inter-jump gap at frozen memory `x*`.
pub fn expected_gap(rate: &RateSpec, x_star: f64) -> Result<f64> {
    match &rate.form {
        RateForm::HardRefractory { f, delta_time } => {
            let fx = f.eval(x_star);
            if fx <= 0.0 {
                Ok(f64::INFINITY)
            } else {
                Ok(delta_time + 1.0 / fx)
            }
        }
        _ => survival_quadrature(rate, x_star).map(|(_, _, s, _)| s),
    }
}

/// Solve `1/lambda = expected_gap(lambda * h_integral)` by a bracketing scan
/// plus bisection. All sign-change brackets on the log grid are reported;
/// `lambda_bar` is the root of the smallest one.
pub fn solve_fixed_point(rate: &RateSpec, h_integral: f64, tol: f64) -> Result<StationaryResult> {
    rate.check_constants()?;
    let lambda_max = match rate.bounded_cap() {
        Some(cap) if cap > 0.0 => 10.0 * cap,
        _ => {
            let guess = rate.lipschitz_l * (1.0 + h_integral.abs());
            10.0 * guess
        }
    };
    let delta = rate.delta();
    let lambda_max = if delta > 0.0 {
        // 1/lambda = rhs >= delta forces lambda <= 1/delta
        lambda_max.min(1.01 / delta)
    } else {
        lambda_max
    };
    let objective = |lambda: f64| -> f64 {
        let gap = expected_gap(rate, lambda * h_integral).unwrap_or(f64::INFINITY);
        if gap.is_infinite() {
            -1.0 / lambda
        } else {
            gap - 1.0 / lambda
        }
    };

    // geometric scan for sign changes
    let lo = EPS_RATE;
    let ratio = (lambda_max / lo).powf(1.0 / BRACKET_GRID as f64);
    let mut brackets = Vec::new();
    let mut prev = lo;
    let mut prev_v = objective(lo);
    for i in 1..=BRACKET_GRID {
        let cur = lo * ratio.powi(i as i32);
        let cur_v = objective(cur);
        if prev_v == 0.0 {
            brackets.push((prev, prev));
        } else if (prev_v < 0.0) != (cur_v < 0.0) {
            brackets.push((prev, cur));
        }
        prev = cur;
        prev_v = cur_v;
    }
    if brackets.is_empty() {
        return Err(Error::NonConvergence(format!(
            "no sign change of the fixed-point residual in ({lo:.1e}, {lambda_max:.3e}); \
             the equation may have no solution for this excitatory interaction"
        )));
    }
    let (blo, bhi) = brackets[0];
    let lambda_bar = if blo == bhi {
        blo
    } else {
        bisect(&objective, blo, bhi, tol * blo.max(1e-9))
    };
    let x_star = lambda_bar * h_integral;
    let gap = expected_gap(rate, x_star)?;
    let residual = (gap - 1.0 / lambda_bar).abs();
    Ok(StationaryResult {
        lambda_bar,
        x_star,
        kappa: 1.0 / gap,
        residual,
        bracket: (blo, bhi),
        brackets,
    })
}

/// Stationary age density `g(a) = kappa exp(-int_0^a psi(x*, z) dz)`.
/// The normalizer `kappa` is the equilibrium jump rate.
pub fn stationary_age_density(rate: &RateSpec, x_star: f64) -> Result<AgeDensity> {
    let (grid, hazard, gap, tail_rate) = survival_quadrature(rate, x_star)?;
    if !gap.is_finite() {
        return Err(Error::Model(
            "the survival integral diverges: psi(x*, .) has no lower bound at large ages, \
             so no stationary age density exists"
                .into(),
        ));
    }
    let kappa = 1.0 / gap;
    let density = hazard.iter().map(|h| kappa * (-h).exp()).collect();
    Ok(AgeDensity {
        kappa,
        grid,
        density,
        hazard_integral: hazard,
        tail_rate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub delta_time: f64,
    pub lambda_bar: f64,
    pub x_star: f64,
    pub residual: f64,
    pub unique_bracket: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    StrictlyIncreasing,
    StrictlyDecreasing,
    NonMonotone,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaSweep {
    pub rows: Vec<SweepRow>,
    pub verdict: Monotonicity,
}

/// Equilibrium rate as a function of the refractory length, holding `f` and
/// the kernel mass fixed.
pub fn delta_sweep(rate: &RateSpec, h_integral: f64, deltas: &[f64], tol: f64) -> Result<DeltaSweep> {
    if deltas.is_empty() {
        return Err(Error::Config("empty delta grid".into()));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for &d in deltas {
        if !(d >= 0.0) {
            return Err(Error::Config(format!("negative refractory length {d}")));
        }
        let mut r = rate.clone();
        match &mut r.form {
            RateForm::HardRefractory { delta_time, .. } => *delta_time = d,
            _ => {
                return Err(Error::Unsupported(
                    "the refractory sweep needs the hard-refractory family".into(),
                ))
            }
        }
        r.postjump_window_delta_time = d;
        let sol = solve_fixed_point(&r, h_integral, tol)?;
        rows.push(SweepRow {
            delta_time: d,
            lambda_bar: sol.lambda_bar,
            x_star: sol.x_star,
            residual: sol.residual,
            unique_bracket: sol.unique(),
        });
    }
    let inc = rows.windows(2).all(|w| w[1].lambda_bar > w[0].lambda_bar);
    let dec = rows.windows(2).all(|w| w[1].lambda_bar < w[0].lambda_bar);
    let verdict = if inc && rows.len() > 1 {
        Monotonicity::StrictlyIncreasing
    } else if dec && rows.len() > 1 {
        Monotonicity::StrictlyDecreasing
    } else {
        Monotonicity::NonMonotone
    };
    Ok(DeltaSweep { rows, verdict })
}
