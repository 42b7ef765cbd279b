//! Numerical solution of the large-network limit.
//!
//! Two routes are provided. `solve_picard_mc` iterates the defining fixed
//! point: given the cumulative expected jump count `phi`, the memory
//! trajectory `x` follows by convolution quadrature, a cloud of i.i.d.
//! limit-unit age processes is thinned against the frozen `x`, and the
//! empirical mean of `psi(x, A)` yields the next `phi`. Common random numbers
//! across iterations keep the stopping rule well-behaved. For the hard
//! refractory case with an Erlang kernel, `solve_hard_refractory_dde`
//! integrates the closed deterministic loop for `p_t = P(A_t >= delta)`
//! instead: a survival integral before the refractory length, the delayed
//! self-coupling after it.

use serde::{Deserialize, Serialize};

use crate::cascade::CascadeState;
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelMatrix};
use crate::prm::PrmParams;
use crate::rates::{RateSpec, ScalarMap};
use crate::sim::{self, AgeLaw, InitialSignal, Mode, NetworkConfig, PopulationConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfPopulation {
    /// Asymptotic share `p_k` of this class.
    pub proportion: f64,
    pub rate: RateSpec,
    /// Limit input trajectory `beta = r`.
    pub beta: InitialSignal,
    pub initial_age_law: AgeLaw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldConfig {
    pub populations: Vec<MfPopulation>,
    pub kernel_matrix: KernelMatrix,
    pub horizon_time: f64,
    pub grid_step_time: f64,
}

fn default_particles() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-3
}

fn default_max_iter() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardParams {
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Sup-norm stopping tolerance on `x`.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for PicardParams {
    fn default() -> Self {
        PicardParams {
            particles: default_particles(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PopulationSolution {
    /// Cumulative expected jump count.
    pub phi: Vec<f64>,
    /// Memory trajectory.
    pub x: Vec<f64>,
    /// `d phi / dt`.
    pub lambda_bar: Vec<f64>,
    /// Standard error of the `lambda_bar` estimate (MC route only).
    pub lambda_se: Option<Vec<f64>>,
    /// `P(A_t >= delta)` for hard-refractory rates.
    pub p: Option<Vec<f64>>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PicardInfo {
    /// Sup-grid deviation of `x` per iteration.
    pub deviations: Vec<f64>,
    pub tol: f64,
    pub particles: usize,
}

#[derive(Debug, Clone)]
pub struct MeanFieldSolution {
    pub grid: Vec<f64>,
    pub populations: Vec<PopulationSolution>,
    pub picard: Option<PicardInfo>,
}

impl MeanFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.populations.is_empty() {
            return Err(Error::Config("need at least one population".into()));
        }
        let sum: f64 = self.populations.iter().map(|p| p.proportion).sum();
        if (sum - 1.0).abs() > 1e-6 || self.populations.iter().any(|p| !(p.proportion > 0.0)) {
            return Err(Error::Config(format!(
                "population proportions must be positive and sum to 1, got sum {sum}"
            )));
        }
        if self.kernel_matrix.populations() != self.populations.len() {
            return Err(Error::Config("kernel matrix size mismatch".into()));
        }
        self.kernel_matrix.validate()?;
        if !(self.grid_step_time > 0.0) || !(self.horizon_time > self.grid_step_time) {
            return Err(Error::Config("need 0 < grid step < horizon".into()));
        }
        for p in &self.populations {
            p.rate.check_constants()?;
            p.initial_age_law.validate()?;
            p.beta.validate(self.horizon_time)?;
            if matches!(p.beta, InitialSignal::Inherited { .. }) {
                return Err(Error::Config(
                    "the limit input must be an explicit trajectory, not inherited points".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = (self.horizon_time / self.grid_step_time).round() as usize;
        let n = n.max(2);
        (0..=n).map(|i| i as f64 * self.grid_step_time).collect()
    }
}

/// Left-endpoint Stieltjes convolution `sum_l p_l int_0^t h_kl(t-s) d phi_l`,
/// with the exact cascade flow for Erlang entries.
fn convolve(
    config: &MeanFieldConfig,
    grid: &[f64],
    dphi: &[Vec<f64>], // per population, length n
    target: usize,
) -> Vec<f64> {
    let n = grid.len() - 1;
    let dt = config.grid_step_time;
    let mut out = vec![0.0; grid.len()];
    for (l, pop) in config.populations.iter().enumerate() {
        let kernel = config.kernel_matrix.entry(target, l);
        if kernel.is_zero() {
            continue;
        }
        let weight = pop.proportion;
        match &kernel.kind {
            KernelKind::Erlang { b, nu_per_time, n: order } => {
                let mut cas = CascadeState::new(weight * b, *nu_per_time, *order)
                    .expect("validated kernel");
                for i in 0..=n {
                    out[i] += cas.x0();
                    if i < n {
                        cas.add_mass(dphi[l][i]);
                        cas.advance(dt);
                    }
                }
            }
            _ => {
                let horizon = kernel.truncation_horizon();
                for i in 1..=n {
                    let t = grid[i];
                    let mut acc = 0.0;
                    for (j, &g) in grid[..i].iter().enumerate() {
                        let lag = t - g;
                        if lag <= horizon {
                            acc += kernel.eval_raw(lag) * dphi[l][j];
                        }
                    }
                    out[i] += weight * acc;
                }
            }
        }
    }
    out
}

/// Ages of every particle at every grid point (left limits), from the log of
/// a zero-kernel particle cloud.
fn particle_ages(
    log: &sim::EventLog,
    grid: &[f64],
    population: usize,
    particles: usize,
) -> Vec<Vec<f64>> {
    let mut birth: Vec<f64> = log.initial_ages[population].iter().map(|a| -a).collect();
    let mut ages = vec![vec![0.0; particles]; grid.len()];
    let mut ev = 0;
    let events = &log.events;
    for (i, &t) in grid.iter().enumerate() {
        while ev < events.len() && events[ev].time < t {
            if events[ev].population as usize == population {
                birth[events[ev].unit as usize] = events[ev].time;
            }
            ev += 1;
        }
        for (j, b) in birth.iter().enumerate() {
            ages[i][j] = t - b;
        }
    }
    ages
}

/// Build the zero-kernel particle cloud driven against frozen memories.
fn particle_cloud_config(
    config: &MeanFieldConfig,
    grid: &[f64],
    x: &[Vec<f64>],
    particles: usize,
) -> NetworkConfig {
    let kp = config.populations.len();
    NetworkConfig {
        populations: config
            .populations
            .iter()
            .enumerate()
            .map(|(k, p)| PopulationConfig {
                size: particles,
                rate: p.rate.clone(),
                initial_signal: InitialSignal::Explicit {
                    grid_times: grid.to_vec(),
                    values: x[k].clone(),
                },
                initial_age_law: p.initial_age_law.clone(),
            })
            .collect(),
        kernel_matrix: KernelMatrix::zero(kp),
        horizon_time: *grid.last().unwrap(),
        mode: Mode::FiniteNetwork,
        prm: PrmParams::default(),
        thinning_window_time: None,
        explosion_cap: None,
    }
}

/// Picard iteration with Monte-Carlo age expectation.
pub fn solve_picard_mc(
    config: &MeanFieldConfig,
    params: &PicardParams,
    seed: u64,
) -> Result<MeanFieldSolution> {
    config.validate()?;
    if params.particles == 0 {
        return Err(Error::Config("need at least one particle".into()));
    }
    let grid = config.grid();
    let n = grid.len() - 1;
    let dt = config.grid_step_time;
    let kp = config.populations.len();
    let m = params.particles;

    let beta: Vec<Vec<f64>> = (0..kp)
        .map(|k| {
            grid.iter()
                .map(|&t| signal_value(&config.populations[k].beta, t))
                .collect()
        })
        .collect();
    let mut x: Vec<Vec<f64>> = beta.clone();
    let mut deviations = Vec::new();
    let mut lambda = vec![vec![0.0; grid.len()]; kp];
    let mut lambda_se = vec![vec![0.0; grid.len()]; kp];
    let mut p_track: Vec<Option<Vec<f64>>> = (0..kp)
        .map(|k| {
            config.populations[k]
                .rate
                .is_hard_refractory()
                .then(|| vec![0.0; grid.len()])
        })
        .collect();
    let mut converged = false;

    for _iter in 0..params.max_iter {
        // common random numbers: the same seed (hence streams and initial
        // ages) in every iteration
        let cloud = particle_cloud_config(config, &grid, &x, m);
        let log = sim::simulate(&cloud, seed)?;
        let mut dphi = vec![vec![0.0; n]; kp];
        for k in 0..kp {
            let rate = &config.populations[k].rate;
            let delta = rate.delta();
            let ages = particle_ages(&log, &grid, k, m);
            for i in 0..grid.len() {
                let xv = x[k][i];
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                let mut above = 0usize;
                for &a in &ages[i] {
                    let v = rate.psi(xv, a);
                    sum += v;
                    sumsq += v * v;
                    if a >= delta {
                        above += 1;
                    }
                }
                let mean = sum / m as f64;
                lambda[k][i] = mean;
                let var = (sumsq / m as f64 - mean * mean).max(0.0);
                lambda_se[k][i] = (var / m as f64).sqrt();
                if let Some(p) = p_track[k].as_mut() {
                    p[i] = above as f64 / m as f64;
                }
            }
            for i in 0..n {
                dphi[k][i] = lambda[k][i] * dt;
            }
        }
        let mut dev: f64 = 0.0;
        let mut x_next = Vec::with_capacity(kp);
        for k in 0..kp {
            let conv = convolve(config, &grid, &dphi, k);
            let xk: Vec<f64> = (0..grid.len()).map(|i| conv[i] + beta[k][i]).collect();
            for (a, b) in xk.iter().zip(&x[k]) {
                dev = dev.max((a - b).abs());
            }
            x_next.push(xk);
        }
        x = x_next;
        deviations.push(dev);
        if dev <= params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "picard iteration exceeded {} iterations; sup-deviation trace: {:?}",
            params.max_iter, deviations
        )));
    }

    let populations = (0..kp)
        .map(|k| {
            let mut phi = vec![0.0; grid.len()];
            for i in 0..n {
                phi[i + 1] = phi[i] + lambda[k][i] * dt;
            }
            PopulationSolution {
                phi,
                x: x[k].clone(),
                lambda_bar: lambda[k].clone(),
                lambda_se: Some(lambda_se[k].clone()),
                p: p_track[k].clone(),
                beta: beta[k].clone(),
            }
        })
        .collect();
    Ok(MeanFieldSolution {
        grid,
        populations,
        picard: Some(PicardInfo {
            deviations,
            tol: params.tol,
            particles: m,
        }),
    })
}

fn signal_value(signal: &InitialSignal, t: f64) -> f64 {
    signal.value(t)
}

/// `P(A_0 >= a)` and the density, where defined, of the supported laws.
fn age_survival(law: &AgeLaw, a: f64) -> f64 {
    match law {
        AgeLaw::PointMass { age_time } => {
            if *age_time >= a {
                1.0
            } else {
                0.0
            }
        }
        AgeLaw::Exponential { rate_per_time } => (-rate_per_time * a.max(0.0)).exp(),
        AgeLaw::Uniform { max_time } => (1.0 - a.max(0.0) / max_time).clamp(0.0, 1.0),
        AgeLaw::Empirical { ages } => {
            ages.iter().filter(|&&x| x >= a).count() as f64 / ages.len() as f64
        }
    }
}

fn age_density(law: &AgeLaw, a: f64) -> Result<f64> {
    match law {
        AgeLaw::Exponential { rate_per_time } => {
            if a < 0.0 {
                Ok(0.0)
            } else {
                Ok(rate_per_time * (-rate_per_time * a).exp())
            }
        }
        AgeLaw::Uniform { max_time } => {
            if (0.0..=*max_time).contains(&a) {
                Ok(1.0 / max_time)
            } else {
                Ok(0.0)
            }
        }
        _ => Err(Error::Unsupported(
            "this initial age law has no density; use the survival representation".into(),
        )),
    }
}

/// `(1 - e^{-z}) / z`, stable near zero.
fn expm1_ratio(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

/// Deterministic integration of the one-class hard-refractory limit: the
/// Erlang cascade is advanced by its exact flow with source `b * lambda_bar dt`,
/// and `p` follows the survival integral on `[0, delta]` (or the density-start
/// equation) and the delayed equation
/// `dp/dt = f(x_{t-delta}) p_{t-delta} - f(x_t) p_t` past `delta`.
pub fn solve_hard_refractory_dde(config: &MeanFieldConfig) -> Result<MeanFieldSolution> {
    config.validate()?;
    if config.populations.len() != 1 {
        return Err(Error::Unsupported(
            "the deterministic closure covers one class; use the Picard-MC solver for several"
                .into(),
        ));
    }
    let pop = &config.populations[0];
    let f = match &pop.rate.form {
        crate::rates::RateForm::HardRefractory { f, .. } => f.clone(),
        _ => {
            return Err(Error::Unsupported(
                "the deterministic closure needs a hard-refractory rate".into(),
            ))
        }
    };
    let delta = pop.rate.delta();
    if !(delta > 0.0) {
        return Err(Error::Config("need a positive refractory length".into()));
    }
    let dt = config.grid_step_time;
    let steps_per_delta = delta / dt;
    if (steps_per_delta - steps_per_delta.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "grid step {dt} must divide the refractory length {delta}"
        )));
    }
    let mdx = steps_per_delta.round() as usize;
    let kernel = config.kernel_matrix.entry(0, 0);
    let mut cascade = match &kernel.kind {
        KernelKind::Erlang { b, nu_per_time, n } if !kernel.is_zero() => Some(
            CascadeState::new(pop.populations_weight() * b, *nu_per_time, *n)?,
        ),
        KernelKind::Zero => None,
        _ if kernel.is_zero() => None,
        _ => {
            return Err(Error::Unsupported(
                "the deterministic closure needs an Erlang (or zero) kernel".into(),
            ))
        }
    };

    let grid = config.grid();
    let n = grid.len() - 1;
    let law = &pop.initial_age_law;
    let point_mass_age = match law {
        AgeLaw::PointMass { age_time } => Some(*age_time),
        _ => None,
    };

    let beta: Vec<f64> = grid.iter().map(|&t| signal_value(&pop.beta, t)).collect();
    let mut x = vec![0.0; grid.len()];
    let mut p = vec![0.0; grid.len()];
    let mut lambda = vec![0.0; grid.len()];
    let mut phi = vec![0.0; grid.len()];
    // cumulative integral of f(x) for the survival representation
    let mut big_f = vec![0.0; grid.len()];
    // trapezoid-consistent cumulative jump mass, for the integrated delay form
    let mut phi_trap = vec![0.0; grid.len()];

    x[0] = beta[0] + cascade.as_ref().map_or(0.0, |c| c.x0());
    p[0] = age_survival(law, delta);

    for i in 0..n {
        lambda[i] = f.eval(x[i]) * p[i];
        phi[i + 1] = phi[i] + lambda[i] * dt;
        if let Some(c) = cascade.as_mut() {
            c.add_mass(lambda[i] * dt);
            c.advance(dt);
            x[i + 1] = beta[i + 1] + c.x0();
        } else {
            x[i + 1] = beta[i + 1];
        }
        let f_i = f.eval(x[i]);
        let f_ip = f.eval(x[i + 1]);
        big_f[i + 1] = big_f[i] + 0.5 * dt * (f_i + f_ip);

        let t_next = grid[i + 1];
        if i + 1 <= mdx {
            if let Some(a0) = point_mass_age {
                // survival representation:
                // p_t = 1{a0 + t >= delta} exp(-(F(t) - F((delta-a0)+)))
                let start = (delta - a0).max(0.0);
                p[i + 1] = if a0 + t_next < delta {
                    0.0
                } else {
                    let f_start = interp_grid(&grid, &big_f, start);
                    (-(big_f[i + 1] - f_start)).exp()
                };
            } else {
                // density start on [0, delta): dp = pi0(delta - t) dt - f(x_t) p dt,
                // integrated with frozen midpoint source and exact decay
                let src = age_density(law, delta - (grid[i] + 0.5 * dt))?;
                let fbar = 0.5 * (f_i + f_ip);
                let z = fbar * dt;
                p[i + 1] = p[i] * (-z).exp() + src * dt * expm1_ratio(z);
            }
        } else {
            // integrated delay equation: the units younger than delta are
            // exactly those that jumped within the last delta, at most once
            // each, so p_t = 1 - int_{t-delta}^t lambda_bar once t >= delta.
            // Differentiating recovers
            // dp/dt = f(x_{t-delta}) p_{t-delta} - f(x_t) p_t,
            // and the forward step from t = delta carries the right-hand
            // derivative f(x_0) p_0 - f(x_delta) p_delta. The window mass is
            // accumulated by the trapezoid rule, implicit in p_{i+1}:
            //   p (1 + dt f_{i+1}/2)
            //     = 1 - (phiT_i - phiT_{i+1-m}) - dt lambda_i / 2
            let window_mass = phi_trap[i] - phi_trap[i + 1 - mdx];
            p[i + 1] = ((1.0 - window_mass - 0.5 * dt * lambda[i])
                / (1.0 + 0.5 * dt * f_ip))
                .clamp(0.0, 1.0);
        }
        phi_trap[i + 1] = phi_trap[i] + 0.5 * dt * (lambda[i] + f_ip * p[i + 1]);
    }
    lambda[n] = f.eval(x[n]) * p[n];

    Ok(MeanFieldSolution {
        grid,
        populations: vec![PopulationSolution {
            phi,
            x,
            lambda_bar: lambda,
            lambda_se: None,
            p: Some(p),
            beta,
        }],
        picard: None,
    })
}

fn interp_grid(grid: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= grid[0] {
        return values[0];
    }
    if t >= *grid.last().unwrap() {
        return *values.last().unwrap();
    }
    let i = match grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
        Ok(i) => return values[i],
        Err(i) => i - 1,
    };
    let w = (t - grid[i]) / (grid[i + 1] - grid[i]);
    values[i] * (1.0 - w) + values[i + 1] * w
}

impl MfPopulation {
    /// Weight entering the convolution for this class as a source.
    fn populations_weight(&self) -> f64 {
        self.proportion
    }
}

/// Agreement report between the two solver routes.
#[derive(Debug, Clone, Serialize)]
pub struct CrossValidation {
    /// `sup_grid |lambda_mc - lambda_dde|`.
    pub lambda_gap: f64,
    /// `sup_grid |x_mc - x_dde|`.
    pub x_gap: f64,
    /// Particle CLT band: 3 sigma of the MC rate estimate.
    pub clt_band: f64,
    /// Picard stopping slack.
    pub tol_band: f64,
}

impl CrossValidation {
    pub fn band(&self) -> f64 {
        self.clt_band + self.tol_band
    }

    pub fn within_band(&self) -> bool {
        self.lambda_gap <= self.band()
    }
}

pub fn cross_validate(mc: &MeanFieldSolution, dde: &MeanFieldSolution) -> Result<CrossValidation> {
    if mc.grid.len() != dde.grid.len()
        || mc
            .grid
            .iter()
            .zip(&dde.grid)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::Config("solutions live on different grids".into()));
    }
    if mc.populations.len() != dde.populations.len() {
        return Err(Error::Config("population count mismatch".into()));
    }
    let mut lambda_gap: f64 = 0.0;
    let mut x_gap: f64 = 0.0;
    let mut clt: f64 = 0.0;
    for (a, b) in mc.populations.iter().zip(&dde.populations) {
        for i in 0..mc.grid.len() {
            lambda_gap = lambda_gap.max((a.lambda_bar[i] - b.lambda_bar[i]).abs());
            x_gap = x_gap.max((a.x[i] - b.x[i]).abs());
            if let Some(se) = &a.lambda_se {
                clt = clt.max(3.0 * se[i]);
            }
            if let Some(se) = &b.lambda_se {
                clt = clt.max(3.0 * se[i]);
            }
        }
    }
    let tol_band = mc
        .picard
        .as_ref()
        .or(dde.picard.as_ref())
        .map(|p| p.tol)
        .unwrap_or(0.0);
    Ok(CrossValidation {
        lambda_gap,
        x_gap,
        clt_band: clt,
        tol_band,
    })
}
