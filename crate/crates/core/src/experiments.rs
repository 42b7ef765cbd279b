//! Desk-scale experiment harness: coupling under shared noise, propagation of
//! chaos across network sizes, robustness to weight-function perturbation,
//! and the time-rescaling goodness-of-fit diagnostic.
//!
//! Shared noise is literal here: two runs on the same seed read identical PRM
//! cells, so exact path agreement after a finite time is meaningful and the
//! experiment surrogates (non-common event counts) are sharp.

use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::CascadeState;
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelMatrix};
use crate::meanfield::{MeanFieldConfig, MeanFieldSolution};
use crate::prm::mix_seed;
use crate::quad::adaptive_simpson;
use crate::sim::{
    self, AgeLaw, EventLog, InitialSignal, Mode, NetworkConfig, PopulationConfig,
};

// ---------------------------------------------------------------------------
// Time rescaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RescalingReport {
    pub ks_statistic: f64,
    /// Asymptotic Kolmogorov p-value (Stephens' small-sample correction).
    pub p_value_bound: f64,
    pub n: usize,
}

impl RescalingReport {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value_bound >= significance
    }
}

/// Kolmogorov-Smirnov distance of the sample against Exp(1).
pub fn ks_statistic_exp1(gaps: &[f64]) -> f64 {
    let mut sorted = gaps.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        d = d.max((cdf - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - cdf).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail probability `P(D > d)` with Stephens'
/// finite-sample correction of the argument.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for j in 1..=100 {
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

pub fn ks_exp1_report(gaps: &[f64]) -> RescalingReport {
    let d = ks_statistic_exp1(gaps);
    RescalingReport {
        ks_statistic: d,
        p_value_bound: kolmogorov_p_value(d, gaps.len()),
        n: gaps.len(),
    }
}

/// Replays one population's memory path from a log, segment by segment
/// between global events, for continuum evaluation of the intensity.
struct MemoryReplay<'a> {
    log: &'a EventLog,
    population: usize,
    scale: f64,
    cascades: Vec<Option<CascadeState>>,
    /// Indices into `log.events` already applied (all events before `t_base`).
    applied: usize,
    t_base: f64,
}

impl<'a> MemoryReplay<'a> {
    fn new(log: &'a EventLog, population: usize) -> Self {
        let config = &log.config;
        let kp = config.populations.len();
        let scale = config.scale();
        let cascades = (0..kp)
            .map(|l| {
                let kernel = config.kernel_matrix.entry(population, l);
                match &kernel.kind {
                    KernelKind::Erlang { b, nu_per_time, n } if !kernel.is_zero() => {
                        let pts: &[f64] = match &config.populations[l].initial_signal {
                            InitialSignal::Inherited { point_times } => point_times,
                            _ => &[],
                        };
                        Some(
                            CascadeState::init_from_point_measure(scale * b, *nu_per_time, *n, pts)
                                .expect("validated kernel"),
                        )
                    }
                    _ => None,
                }
            })
            .collect();
        MemoryReplay {
            log,
            population,
            scale,
            cascades,
            applied: 0,
            t_base: 0.0,
        }
    }

    /// Apply events up to and including time `t` and move the base there;
    /// evaluation points sit strictly inside the following segment, so every
    /// event at or before the segment start belongs to their left limit.
    fn advance_base(&mut self, t: f64) {
        while self.applied < self.log.events.len() && self.log.events[self.applied].time <= t {
            let e = &self.log.events[self.applied];
            if let Some(c) = &mut self.cascades[e.population as usize] {
                c.advance_to(e.time);
                c.on_event();
            }
            self.applied += 1;
        }
        self.t_base = t;
    }

    /// Memory at `s in [t_base, next event)`, using only already-applied events.
    fn memory_at(&self, s: f64) -> f64 {
        let config = &self.log.config;
        let mut x = config.populations[self.population].initial_signal.value(s);
        for (l, c) in self.cascades.iter().enumerate() {
            match c {
                Some(c) => x += c.peek_x0(s - c.last_update),
                None => {
                    let kernel = config.kernel_matrix.entry(self.population, l);
                    if !kernel.is_zero() {
                        for e in &self.log.events[..self.applied] {
                            if e.population as usize == l {
                                x += self.scale * kernel.eval_raw(s - e.time);
                            }
                        }
                        if let InitialSignal::Inherited { point_times } =
                            &config.populations[l].initial_signal
                        {
                            for &p in point_times {
                                x += self.scale * kernel.eval_raw(s - p);
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Integrated intensity of one unit at each of its event times, recomputed
/// from the log by piecewise quadrature between events (split additionally at
/// the rate's age breakpoints).
pub fn compensator_at_events(log: &EventLog, population: usize, unit: usize) -> Result<Vec<f64>> {
    let config = &log.config;
    let rate = &config.populations[population].rate;
    let unit_times = log.unit_events(population, unit);
    let mut replay = MemoryReplay::new(log, population);
    let breakpoints = rate.age_breakpoints();

    let mut lambda_int = 0.0;
    let mut out = Vec::with_capacity(unit_times.len());
    let mut birth = -log.initial_ages[population][unit];
    let mut next_own = 0usize;
    // walk global events so the memory path is exact between them
    let mut boundaries: Vec<f64> = log.events.iter().map(|e| e.time).collect();
    boundaries.push(log.horizon);
    let mut t0 = 0.0;
    for &t1 in &boundaries {
        if t1 > t0 {
            replay.advance_base(t0);
            // split the segment at age kinks
            let mut cuts = vec![t0];
            for bp in &breakpoints {
                let s = birth + bp;
                if s > t0 && s < t1 {
                    cuts.push(s);
                }
            }
            cuts.push(t1);
            cuts.sort_by(|a, b| a.total_cmp(b));
            for pair in cuts.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let seg = adaptive_simpson(
                    &|s| rate.psi(replay.memory_at(s), s - birth),
                    a,
                    b,
                    1e-12 * (1.0 + (b - a)),
                );
                lambda_int += seg;
            }
        }
        if next_own < unit_times.len() && unit_times[next_own] == t1 {
            out.push(lambda_int);
            birth = t1;
            next_own += 1;
        }
        t0 = t1;
    }
    Ok(out)
}

/// Unit-rate exponential gaps under the time change: differences of the
/// compensator at the unit's event times.
pub fn compensator_gaps(log: &EventLog, population: usize, unit: usize) -> Result<Vec<f64>> {
    let lam = compensator_at_events(log, population, unit)?;
    let mut gaps = Vec::with_capacity(lam.len());
    let mut prev = 0.0;
    for v in lam {
        gaps.push(v - prev);
        prev = v;
    }
    Ok(gaps)
}

/// KS test of the time-rescaled inter-event gaps against Exp(1).
pub fn rescaling_test(log: &EventLog, population: usize, unit: usize) -> Result<RescalingReport> {
    let gaps = compensator_gaps(log, population, unit)?;
    if gaps.len() < 100 {
        return Err(Error::Domain(format!(
            "rescaling test needs at least 100 events, got {}",
            gaps.len()
        )));
    }
    Ok(ks_exp1_report(&gaps))
}

// ---------------------------------------------------------------------------
// Coupling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CouplingOutcome {
    pub coupled: bool,
    /// First time after which the two logs agree through the horizon
    /// (0 when they never differed).
    pub coupling_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub outcomes: Vec<CouplingOutcome>,
    pub fraction_coupled: f64,
    pub horizon: f64,
}

/// Compare two logs driven by the same streams: coupled means the event logs
/// agree exactly on `(t_c, horizon]` and every unit's age agrees at the
/// horizon.
pub fn detect_coupling(a: &EventLog, b: &EventLog) -> CouplingOutcome {
    let horizon = a.horizon;
    let mut t_c = 0.0f64;
    let key = |e: &sim::EventRecord| (e.time.to_bits(), e.population, e.unit);
    let set_a: std::collections::HashSet<_> = a.events.iter().map(key).collect();
    let set_b: std::collections::HashSet<_> = b.events.iter().map(key).collect();
    for e in a.events.iter().filter(|e| !set_b.contains(&key(e))) {
        t_c = t_c.max(e.time);
    }
    for e in b.events.iter().filter(|e| !set_a.contains(&key(e))) {
        t_c = t_c.max(e.time);
    }
    // ages at the horizon
    for (k, pop_ages) in a.initial_ages.iter().enumerate() {
        for i in 0..pop_ages.len() {
            let last_a = a
                .unit_events(k, i)
                .last()
                .copied();
            let last_b = b.unit_events(k, i).last().copied();
            let agree = match (last_a, last_b) {
                (Some(x), Some(y)) => x == y,
                (None, None) => a.initial_ages[k][i] == b.initial_ages[k][i],
                _ => false,
            };
            if !agree {
                return CouplingOutcome {
                    coupled: false,
                    coupling_time: horizon,
                };
            }
        }
    }
    CouplingOutcome {
        coupled: true,
        coupling_time: t_c,
    }
}

/// Run the same network twice per replicate on literally the same PRM
/// realization, differing only in initial ages and initial signals, and scan
/// for pathwise coupling.
pub fn coupling_experiment(
    base: &NetworkConfig,
    seed: u64,
    init_a: (&[AgeLaw], &[AgeLaw]),
    init_r: (&[InitialSignal], &[InitialSignal]),
    replicates: usize,
) -> Result<CouplingReport> {
    let kp = base.populations.len();
    if init_a.0.len() != kp || init_a.1.len() != kp || init_r.0.len() != kp || init_r.1.len() != kp
    {
        return Err(Error::Config(
            "initial settings must list one entry per population".into(),
        ));
    }
    let build = |ages: &[AgeLaw], signals: &[InitialSignal]| -> NetworkConfig {
        let mut c = base.clone();
        for (k, p) in c.populations.iter_mut().enumerate() {
            p.initial_age_law = ages[k].clone();
            p.initial_signal = signals[k].clone();
        }
        c
    };
    let config_a = build(init_a.0, init_r.0);
    let config_b = build(init_a.1, init_r.1);
    config_a.validate()?;
    config_b.validate()?;

    let outcomes: Vec<CouplingOutcome> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let s = mix_seed(seed, rep as u64);
            let log_a = sim::simulate(&config_a, s)?;
            let log_b = sim::simulate(&config_b, s)?;
            Ok(detect_coupling(&log_a, &log_b))
        })
        .collect::<Result<_>>()?;
    let coupled = outcomes.iter().filter(|o| o.coupled).count();
    Ok(CouplingReport {
        fraction_coupled: coupled as f64 / replicates.max(1) as f64,
        outcomes,
        horizon: base.horizon_time,
    })
}

/// Candidate-level audit that two logs consumed the same noise: candidates
/// fetched at the same time carry identical marks.
pub fn shared_noise_check(a: &EventLog, b: &EventLog) -> Result<bool> {
    let (au, bu) = match (&a.audit, &b.audit) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(Error::Config(
                "shared-noise check needs both logs simulated with auditing".into(),
            ))
        }
    };
    let mut marks = std::collections::HashMap::new();
    for c in au {
        marks.insert((c.time.to_bits(), c.population, c.unit), c.mark);
    }
    for c in bu {
        if let Some(m) = marks.get(&(c.time.to_bits(), c.population, c.unit)) {
            if *m != c.mark {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Propagation of chaos
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ChaosRow {
    pub n_total: usize,
    /// Per class: mean over replicates of `sup_t |X^{Nk} - x^k|`.
    pub x_gap_mean: Vec<f64>,
    pub x_gap_se: Vec<f64>,
    /// Per class: mean non-common event count of the tagged pair.
    pub noncommon_mean: Vec<f64>,
    pub noncommon_se: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
}

/// Class sizes `N_k ~ p_k N` summing exactly to `N`, each at least one.
pub fn class_sizes(proportions: &[f64], n: usize) -> Result<Vec<usize>> {
    if n < proportions.len() {
        return Err(Error::Config(format!(
            "network size {n} is below the class count {}",
            proportions.len()
        )));
    }
    let mut sizes: Vec<usize> = proportions
        .iter()
        .map(|p| ((p * n as f64).floor() as usize).max(1))
        .collect();
    let mut total: usize = sizes.iter().sum();
    // distribute the remainder by largest fractional part, deterministically
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = proportions[a] * n as f64 - (proportions[a] * n as f64).floor();
        let fb = proportions[b] * n as f64 - (proportions[b] * n as f64).floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut idx = 0;
    while total < n {
        sizes[order[idx % order.len()]] += 1;
        total += 1;
        idx += 1;
    }
    while total > n {
        let i = order[idx % order.len()];
        if sizes[i] > 1 {
            sizes[i] -= 1;
            total -= 1;
        }
        idx += 1;
    }
    Ok(sizes)
}

/// The finite network induced by a mean-field model at size `N`.
pub fn network_at_size(mf: &MeanFieldConfig, n: usize) -> Result<NetworkConfig> {
    let sizes = class_sizes(
        &mf.populations.iter().map(|p| p.proportion).collect::<Vec<_>>(),
        n,
    )?;
    Ok(NetworkConfig {
        populations: mf
            .populations
            .iter()
            .zip(&sizes)
            .map(|(p, &size)| PopulationConfig {
                size,
                rate: p.rate.clone(),
                initial_signal: p.beta.clone(),
                initial_age_law: p.initial_age_law.clone(),
            })
            .collect(),
        kernel_matrix: mf.kernel_matrix.clone(),
        horizon_time: mf.horizon_time,
        mode: Mode::MeanFieldScaled,
        prm: Default::default(),
        thinning_window_time: None,
        explosion_cap: None,
    })
}

/// Single limit unit of class `k` driven against the frozen limit memory,
/// keyed like the network's unit `(k, 0)` so the pair shares its PRM.
fn tagged_twin_config(
    mf: &MeanFieldConfig,
    limit: &MeanFieldSolution,
    class: usize,
) -> NetworkConfig {
    let kp = mf.populations.len();
    NetworkConfig {
        populations: mf
            .populations
            .iter()
            .enumerate()
            .map(|(k, p)| PopulationConfig {
                size: usize::from(k == class),
                rate: p.rate.clone(),
                initial_signal: InitialSignal::Explicit {
                    grid_times: limit.grid.clone(),
                    values: limit.populations[k].x.clone(),
                },
                initial_age_law: p.initial_age_law.clone(),
            })
            .collect(),
        kernel_matrix: KernelMatrix::zero(kp),
        horizon_time: mf.horizon_time,
        mode: Mode::FiniteNetwork,
        prm: Default::default(),
        thinning_window_time: None,
        explosion_cap: None,
    }
}

fn noncommon_count(a: &[f64], b: &[f64]) -> usize {
    let sa: std::collections::HashSet<u64> = a.iter().map(|t| t.to_bits()).collect();
    let sb: std::collections::HashSet<u64> = b.iter().map(|t| t.to_bits()).collect();
    a.iter().filter(|t| !sb.contains(&t.to_bits())).count()
        + b.iter().filter(|t| !sa.contains(&t.to_bits())).count()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// For each network size: simulate, compare the empirical class memories with
/// the limit trajectory on the limit grid, and count the non-common events of
/// each tagged pair under shared noise.
pub fn chaos_experiment(
    mf: &MeanFieldConfig,
    limit: &MeanFieldSolution,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<ChaosReport> {
    mf.validate()?;
    let kp = mf.populations.len();
    let twins: Vec<NetworkConfig> = (0..kp).map(|k| tagged_twin_config(mf, limit, k)).collect();
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let net = network_at_size(mf, n)?;
        let per_rep: Vec<(Vec<f64>, Vec<f64>)> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let s = mix_seed(seed, rep as u64);
                let log = sim::simulate(&net, s)?;
                let trace = sim::memory_trace(&log, &limit.grid);
                let mut gaps = Vec::with_capacity(kp);
                let mut counts = Vec::with_capacity(kp);
                for k in 0..kp {
                    let gap = trace[k]
                        .iter()
                        .zip(&limit.populations[k].x)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    gaps.push(gap);
                    let twin_log = sim::simulate(&twins[k], s)?;
                    let c = noncommon_count(
                        &log.unit_events(k, 0),
                        &twin_log.unit_events(k, 0),
                    );
                    counts.push(c as f64);
                }
                Ok((gaps, counts))
            })
            .collect::<Result<_>>()?;
        let mut x_gap_mean = Vec::with_capacity(kp);
        let mut x_gap_se = Vec::with_capacity(kp);
        let mut nc_mean = Vec::with_capacity(kp);
        let mut nc_se = Vec::with_capacity(kp);
        for k in 0..kp {
            let gaps: Vec<f64> = per_rep.iter().map(|r| r.0[k]).collect();
            let (m, se) = mean_se(&gaps);
            x_gap_mean.push(m);
            x_gap_se.push(se);
            let counts: Vec<f64> = per_rep.iter().map(|r| r.1[k]).collect();
            let (m, se) = mean_se(&counts);
            nc_mean.push(m);
            nc_se.push(se);
        }
        rows.push(ChaosRow {
            n_total: n,
            x_gap_mean,
            x_gap_se,
            noncommon_mean: nc_mean,
            noncommon_se: nc_se,
        });
    }
    Ok(ChaosReport { rows })
}

// ---------------------------------------------------------------------------
// Weight-function approximation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct WeightRow {
    /// `sum_kl int_0^T |h_kl - h~_kl|`.
    pub l1_gap: f64,
    /// Mean over replicates of the summed tagged-unit non-common counts.
    pub event_distance: f64,
    pub event_distance_se: f64,
    /// `event_distance / l1_gap`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightReport {
    pub rows: Vec<WeightRow>,
    /// Empirical constant: the largest distance/gap ratio.
    pub c_hat: f64,
    /// max/min ratio across the ladder; stability indicator.
    pub ratio_spread: f64,
}

/// L1 distance between two kernel sets on `[0, T]`.
pub fn kernel_l1_gap(a: &KernelMatrix, b: &KernelMatrix, horizon: f64) -> Result<f64> {
    if a.populations() != b.populations() {
        return Err(Error::Config("kernel matrices differ in size".into()));
    }
    let mut total = 0.0;
    for k in 0..a.populations() {
        for l in 0..a.populations() {
            let ka = a.entry(k, l);
            let kb = b.entry(k, l);
            let upper = horizon
                .min(ka.truncation_horizon().max(kb.truncation_horizon()));
            if upper > 0.0 {
                total += adaptive_simpson(
                    &|t| (ka.eval_raw(t) - kb.eval_raw(t)).abs(),
                    0.0,
                    upper,
                    1e-10,
                );
            }
        }
    }
    Ok(total)
}

/// Simulate the same network under each perturbed kernel set on shared
/// streams and relate the tagged-unit event distance to the kernel L1 gap.
pub fn weight_approx_experiment(
    base: &NetworkConfig,
    variants: &[KernelMatrix],
    replicates: usize,
    seed: u64,
) -> Result<WeightReport> {
    base.validate()?;
    let kp = base.populations.len();
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        variant.validate()?;
        let mut alt = base.clone();
        alt.kernel_matrix = variant.clone();
        let gap = kernel_l1_gap(&base.kernel_matrix, variant, base.horizon_time)?;
        let distances: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let s = mix_seed(seed, rep as u64);
                let log_a = sim::simulate(base, s)?;
                let log_b = sim::simulate(&alt, s)?;
                let mut d = 0usize;
                for k in 0..kp {
                    d += noncommon_count(&log_a.unit_events(k, 0), &log_b.unit_events(k, 0));
                }
                Ok(d as f64)
            })
            .collect::<Result<_>>()?;
        let (mean, se) = mean_se(&distances);
        rows.push(WeightRow {
            l1_gap: gap,
            event_distance: mean,
            event_distance_se: se,
            ratio: if gap > 0.0 { mean / gap } else { 0.0 },
        });
    }
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.l1_gap > 0.0)
        .map(|r| r.ratio)
        .collect();
    let c_hat = ratios.iter().copied().fold(0.0, f64::max);
    let ratio_spread = if ratios.is_empty() {
        1.0
    } else {
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        if lo > 0.0 {
            c_hat / lo
        } else {
            f64::INFINITY
        }
    };
    Ok(WeightReport {
        rows,
        c_hat,
        ratio_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::prm::PrmParams;
    use crate::rates::{RateSpec, ScalarMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_pop(rate: RateSpec, kernel: KernelSpec, horizon: f64) -> NetworkConfig {
        NetworkConfig {
            populations: vec![PopulationConfig {
                size: 1,
                rate,
                initial_signal: InitialSignal::Zero,
                initial_age_law: AgeLaw::PointMass { age_time: 0.0 },
            }],
            kernel_matrix: KernelMatrix {
                entries: vec![vec![kernel]],
                scale: 1.0,
            },
            horizon_time: horizon,
            mode: Mode::FiniteNetwork,
            prm: PrmParams::default(),
            thinning_window_time: None,
            explosion_cap: None,
        }
    }

    fn logistic(cap: f64) -> ScalarMap {
        ScalarMap::Logistic {
            cap,
            slope: 1.0,
            center: 0.0,
        }
    }

    #[test]
    fn ks_helpers_detect_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample: Vec<f64> = (0..2000)
            .map(|_| -(rng.gen::<f64>().max(1e-16)).ln())
            .collect();
        let report = ks_exp1_report(&sample);
        assert!(report.passes(0.05), "p = {}", report.p_value_bound);
        let shifted: Vec<f64> = sample.iter().map(|x| x * 0.7).collect();
        let bad = ks_exp1_report(&shifted);
        assert!(!bad.passes(0.01), "p = {}", bad.p_value_bound);
    }

    #[test]
    fn rescaling_constant_rate_is_exact() {
        let c = 1.4;
        let rate = RateSpec::custom(move |_, _| c, 1.5, c, 0.0).unwrap();
        let config = single_pop(rate, KernelSpec::zero(), 800.0);
        let log = sim::simulate(&config, 2).unwrap();
        let times = log.unit_events(0, 0);
        let gaps = compensator_gaps(&log, 0, 0).unwrap();
        let mut prev = 0.0;
        for (g, t) in gaps.iter().zip(&times) {
            assert!((g - c * (t - prev)).abs() < 1e-9, "gap {g}");
            prev = *t;
        }
        let report = ks_exp1_report(&gaps);
        assert!(report.passes(0.01), "p = {}", report.p_value_bound);
    }

    #[test]
    fn rescaling_hard_refractory_passes_and_corruption_fails() {
        let rate = RateSpec::hard_refractory(logistic(2.0), 1.0, 2.0).unwrap();
        let config = single_pop(rate, KernelSpec::erlang(-0.8, 1.0, 1).unwrap(), 2500.0);
        let log = sim::simulate(&config, 6).unwrap();
        let gaps = compensator_gaps(&log, 0, 0).unwrap();
        assert!(gaps.len() > 500, "{} events", gaps.len());
        let good = rescaling_test(&log, 0, 0).unwrap();
        assert!(good.passes(0.01), "p = {}", good.p_value_bound);
        let halved: Vec<f64> = gaps.iter().map(|g| 0.5 * g).collect();
        let bad = ks_exp1_report(&halved);
        assert!(!bad.passes(0.01), "p = {}", bad.p_value_bound);
    }

    #[test]
    fn rescaling_needs_enough_events() {
        let rate = RateSpec::hard_refractory(ScalarMap::constant(1.0), 1.0, 1.0).unwrap();
        let config = single_pop(rate, KernelSpec::zero(), 20.0);
        let log = sim::simulate(&config, 1).unwrap();
        assert!(matches!(rescaling_test(&log, 0, 0), Err(Error::Domain(_))));
    }

    fn coupling_base(horizon: f64) -> NetworkConfig {
        let rate = RateSpec::hard_refractory(logistic(2.0), 1.0, 2.0).unwrap();
        NetworkConfig {
            populations: vec![PopulationConfig {
                size: 2,
                rate,
                initial_signal: InitialSignal::Zero,
                initial_age_law: AgeLaw::PointMass { age_time: 0.0 },
            }],
            kernel_matrix: KernelMatrix {
                entries: vec![vec![KernelSpec::erlang(-1.0, 1.0, 0).unwrap()]],
                scale: 1.0,
            },
            horizon_time: horizon,
            mode: Mode::FiniteNetwork,
            prm: PrmParams::default(),
            thinning_window_time: None,
            explosion_cap: None,
        }
    }

    #[test]
    fn identical_settings_couple_at_zero() {
        let base = coupling_base(40.0);
        let ages = vec![AgeLaw::PointMass { age_time: 1.0 }];
        let signals = vec![InitialSignal::Zero];
        let report =
            coupling_experiment(&base, 3, (&ages, &ages), (&signals, &signals), 5).unwrap();
        assert_eq!(report.fraction_coupled, 1.0);
        for o in &report.outcomes {
            assert_eq!(o.coupling_time, 0.0);
        }
    }

    #[test]
    fn state_free_rate_couples_from_the_start() {
        // psi = c ignores memory and age: different initial states change nothing
        let mut base = coupling_base(50.0);
        base.populations[0].rate = RateSpec::custom(|_, _| 1.0, 1.0, 1.0, 0.0).unwrap();
        base.kernel_matrix = KernelMatrix::zero(1);
        let a0 = vec![AgeLaw::PointMass { age_time: 0.0 }];
        let a1 = vec![AgeLaw::PointMass { age_time: 3.0 }];
        let r0 = vec![InitialSignal::Zero];
        let r1 = vec![InitialSignal::ExpDecay {
            amplitude: 1.0,
            rate_per_time: 1.0,
        }];
        let report = coupling_experiment(&base, 9, (&a0, &a1), (&r0, &r1), 5).unwrap();
        assert_eq!(report.fraction_coupled, 1.0);
        for o in &report.outcomes {
            assert_eq!(o.coupling_time, 0.0);
        }
    }

    #[test]
    fn refractory_inhibitory_network_couples() {
        let base = coupling_base(120.0);
        let a0 = vec![AgeLaw::PointMass { age_time: 0.0 }];
        let a1 = vec![AgeLaw::PointMass { age_time: 3.0 }];
        let r0 = vec![InitialSignal::ExpDecay {
            amplitude: 1.0,
            rate_per_time: 1.0,
        }];
        let r1 = vec![InitialSignal::Zero];
        let report = coupling_experiment(&base, 17, (&a0, &a1), (&r0, &r1), 10).unwrap();
        assert!(report.fraction_coupled >= 0.9, "{}", report.fraction_coupled);
        let coupled_times: Vec<f64> = report
            .outcomes
            .iter()
            .filter(|o| o.coupled)
            .map(|o| o.coupling_time)
            .collect();
        assert!(coupled_times.iter().any(|t| *t > 0.0));
    }

    #[test]
    fn shared_noise_audit_agrees() {
        let base = coupling_base(30.0);
        let mut cfg_b = base.clone();
        cfg_b.populations[0].initial_age_law = AgeLaw::PointMass { age_time: 2.0 };
        let log_a = sim::simulate_opts(&base, 5, true).unwrap();
        let log_b = sim::simulate_opts(&cfg_b, 5, true).unwrap();
        assert!(shared_noise_check(&log_a, &log_b).unwrap());
    }

    fn mf_one_class(kernel: KernelSpec, horizon: f64) -> MeanFieldConfig {
        MeanFieldConfig {
            populations: vec![crate::meanfield::MfPopulation {
                proportion: 1.0,
                rate: RateSpec::hard_refractory(logistic(2.0), 1.0, 2.0).unwrap(),
                beta: InitialSignal::Zero,
                initial_age_law: AgeLaw::Uniform { max_time: 2.0 },
            }],
            kernel_matrix: KernelMatrix {
                entries: vec![vec![kernel]],
                scale: 1.0,
            },
            horizon_time: horizon,
            grid_step_time: 0.02,
        }
    }

    #[test]
    fn chaos_zero_kernel_pairs_are_identical() {
        let mf = mf_one_class(KernelSpec::zero(), 6.0);
        let limit = solve_limit(&mf);
        let report = chaos_experiment(&mf, &limit, &[4, 16], 3, 7).unwrap();
        for row in &report.rows {
            assert_eq!(row.noncommon_mean[0], 0.0);
            assert!(row.x_gap_mean[0] < 1e-12);
        }
    }

    fn solve_limit(mf: &MeanFieldConfig) -> MeanFieldSolution {
        crate::meanfield::solve_hard_refractory_dde(mf).unwrap()
    }

    #[test]
    fn chaos_distance_shrinks_with_n() {
        let mf = mf_one_class(KernelSpec::erlang(-0.8, 1.0, 0).unwrap(), 8.0);
        let limit = solve_limit(&mf);
        let report = chaos_experiment(&mf, &limit, &[10, 80], 6, 11).unwrap();
        let small = report.rows[0].x_gap_mean[0];
        let large = report.rows[1].x_gap_mean[0];
        assert!(
            large < small,
            "x gap did not shrink: N=10 gives {small}, N=80 gives {large}"
        );
        assert!(
            report.rows[1].noncommon_mean[0] <= report.rows[0].noncommon_mean[0],
            "tagged-pair distance grew"
        );
    }

    #[test]
    fn chaos_symmetric_classes_look_alike() {
        let rate = RateSpec::hard_refractory(logistic(2.0), 1.0, 2.0).unwrap();
        let kernel = KernelSpec::erlang(-0.5, 1.0, 0).unwrap();
        let mf = MeanFieldConfig {
            populations: (0..2)
                .map(|_| crate::meanfield::MfPopulation {
                    proportion: 0.5,
                    rate: rate.clone(),
                    beta: InitialSignal::Zero,
                    initial_age_law: AgeLaw::Uniform { max_time: 2.0 },
                })
                .collect(),
            kernel_matrix: KernelMatrix {
                entries: vec![
                    vec![kernel.clone(), kernel.clone()],
                    vec![kernel.clone(), kernel.clone()],
                ],
                scale: 1.0,
            },
            horizon_time: 6.0,
            grid_step_time: 0.02,
        };
        let limit = crate::meanfield::solve_picard_mc(
            &mf,
            &crate::meanfield::PicardParams {
                particles: 2000,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let report = chaos_experiment(&mf, &limit, &[40], 6, 13).unwrap();
        let row = &report.rows[0];
        let (d1, d2) = (row.x_gap_mean[0], row.x_gap_mean[1]);
        let band = 3.0 * (row.x_gap_se[0] + row.x_gap_se[1]) + 1e-9;
        assert!((d1 - d2).abs() <= band, "{d1} vs {d2} band {band}");
    }

    #[test]
    fn weights_identical_kernels_give_zero_distance() {
        let base = coupling_base(40.0);
        let report =
            weight_approx_experiment(&base, &[base.kernel_matrix.clone()], 4, 21).unwrap();
        assert_eq!(report.rows[0].l1_gap, 0.0);
        assert_eq!(report.rows[0].event_distance, 0.0);
    }

    #[test]
    fn weights_distance_grows_with_gap() {
        let base = coupling_base(60.0);
        let truncate = |tau: f64| -> KernelMatrix {
            let mut m = base.kernel_matrix.clone();
            m.entries[0][0].truncation_horizon_time = Some(tau);
            m
        };
        let report =
            weight_approx_experiment(&base, &[truncate(2.0), truncate(0.5)], 12, 23).unwrap();
        let tight = &report.rows[0];
        let loose = &report.rows[1];
        assert!(tight.l1_gap < loose.l1_gap);
        assert!(
            tight.event_distance <= loose.event_distance + 1e-9,
            "distance not monotone: {} vs {}",
            tight.event_distance,
            loose.event_distance
        );
    }

    #[test]
    fn class_sizes_sum_and_floor() {
        let sizes = class_sizes(&[0.5, 0.3, 0.2], 10).unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert_eq!(sizes, vec![5, 3, 2]);
        let sizes = class_sizes(&[0.6, 0.4], 7).unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), 7);
        assert!(class_sizes(&[0.5, 0.5], 1).is_err());
    }
}
