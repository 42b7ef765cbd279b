//! Exact event-driven simulation of the N-dimensional age-dependent Hawkes
//! network by thinning.
//!
//! Between events every population carries a local intensity majorant valid
//! over a short lookahead window: the memory bound comes from the cascade
//! coordinates (Erlang kernels), envelope scans (other kernels) and the
//! initial signal, and the rate's sub-linear growth turns it into a mark
//! ceiling. PRM candidates below the ceiling are fetched from the
//! reproducible streams and accepted iff their mark is at most
//! `psi(X_{s-}, A_{s-})`; each accepted event resets the owner's age, feeds
//! the memory paths, and re-derives the window. The construction is exact:
//! no discretization enters the sample paths.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeState;
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelMatrix};
use crate::prm::{unit_rng, PrmParams, PrmStream, UnitKey, TAG_INITIAL_AGE};
use crate::rates::RateSpec;

const DEFAULT_EXPLOSION_CAP: usize = 10_000_000;

/// Assertion slack for the sub-linear and majorant domination checks.
const DOMINATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Kernels used as given.
    FiniteNetwork,
    /// Kernels scaled by `1/N`.
    MeanFieldScaled,
}

/// Law of the initial ages within a population.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgeLaw {
    PointMass { age_time: f64 },
    Exponential { rate_per_time: f64 },
    Uniform { max_time: f64 },
    Empirical { ages: Vec<f64> },
}

impl AgeLaw {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            AgeLaw::PointMass { age_time } => *age_time,
            AgeLaw::Exponential { rate_per_time } => {
                let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                -u.ln() / rate_per_time
            }
            AgeLaw::Uniform { max_time } => rng.gen::<f64>() * max_time,
            AgeLaw::Empirical { ages } => ages[rng.gen_range(0..ages.len())],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AgeLaw::PointMass { age_time } if *age_time < 0.0 => {
                Err(Error::Config("initial age must be >= 0".into()))
            }
            AgeLaw::Exponential { rate_per_time } if !(*rate_per_time > 0.0) => {
                Err(Error::Config("exponential age law needs rate > 0".into()))
            }
            AgeLaw::Uniform { max_time } if !(*max_time > 0.0) => {
                Err(Error::Config("uniform age law needs max_time > 0".into()))
            }
            AgeLaw::Empirical { ages } if ages.is_empty() || ages.iter().any(|a| *a < 0.0) => {
                Err(Error::Config("empirical age law needs nonnegative ages".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-population initial signal `R_t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSignal {
    Zero,
    /// `amplitude * exp(-rate t)`.
    ExpDecay { amplitude: f64, rate_per_time: f64 },
    /// Right-continuous step function: `values[i]` on `[grid_times[i], grid_times[i+1])`,
    /// last value persisting beyond the grid.
    Explicit {
        grid_times: Vec<f64>,
        values: Vec<f64>,
    },
    /// Jumps of this population before time 0; they reach every population's
    /// memory through the kernel matrix, like ordinary events.
    Inherited { point_times: Vec<f64> },
}

impl InitialSignal {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        match self {
            InitialSignal::Zero => Ok(()),
            InitialSignal::ExpDecay { rate_per_time, .. } => {
                if *rate_per_time < 0.0 {
                    Err(Error::Config("exp_decay signal needs rate >= 0".into()))
                } else {
                    Ok(())
                }
            }
            InitialSignal::Explicit { grid_times, values } => {
                if grid_times.len() != values.len() || grid_times.is_empty() {
                    return Err(Error::Config(
                        "explicit signal needs equal-length nonempty grids".into(),
                    ));
                }
                if grid_times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("explicit signal grid must increase".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("explicit signal values must be finite".into()));
                }
                // locally integrable proxy on [0, horizon]
                let _ = horizon;
                Ok(())
            }
            InitialSignal::Inherited { point_times } => {
                if point_times.iter().any(|t| *t > 0.0) {
                    Err(Error::Config("inherited points must lie at times <= 0".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Direct value at `t` (the inherited kind contributes through the kernel
    /// matrix instead and reports 0 here).
    pub(crate) fn value(&self, t: f64) -> f64 {
        match self {
            InitialSignal::Zero | InitialSignal::Inherited { .. } => 0.0,
            InitialSignal::ExpDecay {
                amplitude,
                rate_per_time,
            } => amplitude * (-rate_per_time * t).exp(),
            InitialSignal::Explicit { grid_times, values } => {
                if t < grid_times[0] {
                    return 0.0;
                }
                let i = match grid_times.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
                    Ok(i) => i,
                    Err(i) => i - 1,
                };
                values[i]
            }
        }
    }

    /// Upper bound for `|R|` over `[t, t + w]`.
    fn window_bound(&self, t: f64, w: f64) -> f64 {
        match self {
            InitialSignal::Zero | InitialSignal::Inherited { .. } => 0.0,
            InitialSignal::ExpDecay {
                amplitude,
                rate_per_time,
            } => amplitude.abs() * (-rate_per_time * t).exp(),
            InitialSignal::Explicit { grid_times, values } => {
                let mut bound = self.value(t).abs().max(self.value(t + w).abs());
                for (g, v) in grid_times.iter().zip(values) {
                    if *g >= t && *g <= t + w {
                        bound = bound.max(v.abs());
                    }
                }
                bound
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub size: usize,
    pub rate: RateSpec,
    pub initial_signal: InitialSignal,
    pub initial_age_law: AgeLaw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub populations: Vec<PopulationConfig>,
    pub kernel_matrix: KernelMatrix,
    pub horizon_time: f64,
    pub mode: Mode,
    #[serde(default)]
    pub prm: PrmParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinning_window_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explosion_cap: Option<usize>,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.populations.is_empty() {
            return Err(Error::Config("need at least one population".into()));
        }
        if self.total_units() == 0 {
            return Err(Error::Config("population sizes sum to zero".into()));
        }
        if !(self.horizon_time > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.kernel_matrix.populations() != self.populations.len() {
            return Err(Error::Config(format!(
                "kernel matrix is {}x{} but there are {} populations",
                self.kernel_matrix.populations(),
                self.kernel_matrix.populations(),
                self.populations.len()
            )));
        }
        self.kernel_matrix.validate()?;
        for p in &self.populations {
            p.rate.check_constants()?;
            p.initial_age_law.validate()?;
            p.initial_signal.validate(self.horizon_time)?;
        }
        if let Some(w) = self.thinning_window_time {
            if !(w > 0.0) {
                return Err(Error::Config("thinning window must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn total_units(&self) -> usize {
        self.populations.iter().map(|p| p.size).sum()
    }

    /// Interaction scale: `1/N` in mean-field mode.
    pub fn scale(&self) -> f64 {
        match self.mode {
            Mode::FiniteNetwork => self.kernel_matrix.scale,
            Mode::MeanFieldScaled => 1.0 / self.total_units() as f64,
        }
    }

    /// Lookahead width for the thinning majorant:
    /// `0.1 * min(1/nu, delta, 1)` unless overridden.
    pub fn thinning_window(&self) -> f64 {
        if let Some(w) = self.thinning_window_time {
            return w;
        }
        let mut m: f64 = 1.0;
        for row in &self.kernel_matrix.entries {
            for k in row {
                if let KernelKind::Erlang { nu_per_time, b, .. } = &k.kind {
                    if *b != 0.0 {
                        m = m.min(1.0 / nu_per_time);
                    }
                }
            }
        }
        for p in &self.populations {
            let d = p.rate.delta();
            if d > 0.0 {
                m = m.min(d);
            }
        }
        0.1 * m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventRecord {
    pub time: f64,
    pub population: u32,
    pub unit: u32,
}

/// One examined thinning candidate, for audits.
#[derive(Debug, Clone, Copy)]
pub struct CandidateAudit {
    pub time: f64,
    pub population: u32,
    pub unit: u32,
    pub mark: f64,
    pub intensity: f64,
    pub memory: f64,
    pub accepted: bool,
}

/// Result of a network simulation: the counting measure plus enough context
/// to recompute intensities, memories and compensators from scratch.
#[derive(Debug, Clone)]
pub struct EventLog {
    pub config: NetworkConfig,
    pub seed: u64,
    pub events: Vec<EventRecord>,
    pub initial_ages: Vec<Vec<f64>>,
    pub final_ages: Vec<Vec<f64>>,
    /// Per-population memory immediately after the horizon.
    pub final_memory: Vec<f64>,
    pub horizon: f64,
    pub audit: Option<Vec<CandidateAudit>>,
}

impl EventLog {
    pub fn unit_events(&self, population: usize, unit: usize) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.population as usize == population && e.unit as usize == unit)
            .map(|e| e.time)
            .collect()
    }

    /// Left-limit age of a unit at `t`: time since the last event strictly
    /// before `t`, or the initial age plus `t`.
    pub fn age_at(&self, population: usize, unit: usize, t: f64) -> f64 {
        let mut birth = -self.initial_ages[population][unit];
        for e in &self.events {
            if e.time >= t {
                break;
            }
            if e.population as usize == population && e.unit as usize == unit {
                birth = e.time;
            }
        }
        t - birth
    }
}

/// Draw the initial ages for every unit; keyed by `(seed, unit)` so coupled
/// runs with the same law reproduce the same draws.
pub fn draw_initial_ages(config: &NetworkConfig, seed: u64) -> Vec<Vec<f64>> {
    config
        .populations
        .iter()
        .enumerate()
        .map(|(k, p)| {
            (0..p.size)
                .map(|i| {
                    let mut rng = unit_rng(seed, UnitKey::new(k, i), TAG_INITIAL_AGE);
                    p.initial_age_law.sample(&mut rng)
                })
                .collect()
        })
        .collect()
}

/// Memory path of one (target, source) population pair.
enum MemoryPath {
    Zero,
    /// Exact O(1) state for Erlang kernels; amplitude already scaled.
    Cascade(CascadeState),
    /// Event-history scan for general kernels, truncated at the kernel horizon.
    Scan,
}

struct Engine<'a> {
    config: &'a NetworkConfig,
    scale: f64,
    window: f64,
    t_cur: f64,
    initial_ages: Vec<Vec<f64>>,
    /// `birth[k][i]`: last event time, or minus the initial age.
    birth: Vec<Vec<f64>>,
    paths: Vec<Vec<MemoryPath>>,
    /// Source events kept for `Scan` paths, pruned past the largest horizon.
    scan_events: Vec<VecDeque<f64>>,
    scan_needed: Vec<bool>,
    /// Inherited pre-zero points per source population (non-Erlang kernels
    /// read them directly; Erlang kernels absorbed them into the cascade).
    inherited_points: Vec<Vec<f64>>,
    streams: Vec<Vec<PrmStream>>,
    max_horizon: f64,
}

impl<'a> Engine<'a> {
    fn new(
        config: &'a NetworkConfig,
        seed: u64,
        key_map: &dyn Fn(UnitKey) -> UnitKey,
    ) -> Result<Self> {
        let kp = config.populations.len();
        let scale = config.scale();
        let mut paths = Vec::with_capacity(kp);
        let mut inherited_points = vec![Vec::new(); kp];
        for (l, p) in config.populations.iter().enumerate() {
            if let InitialSignal::Inherited { point_times } = &p.initial_signal {
                inherited_points[l] = point_times.clone();
            }
        }
        for k in 0..kp {
            let mut row = Vec::with_capacity(kp);
            for (l, _) in config.populations.iter().enumerate() {
                let kernel = config.kernel_matrix.entry(k, l);
                let path = if kernel.is_zero() {
                    MemoryPath::Zero
                } else if let KernelKind::Erlang { b, nu_per_time, n } = &kernel.kind {
                    let state = if inherited_points[l].is_empty() {
                        CascadeState::new(scale * b, *nu_per_time, *n)?
                    } else {
                        CascadeState::init_from_point_measure(
                            scale * b,
                            *nu_per_time,
                            *n,
                            &inherited_points[l],
                        )?
                    };
                    MemoryPath::Cascade(state)
                } else {
                    MemoryPath::Scan
                };
                row.push(path);
            }
            paths.push(row);
        }
        let mut scan_needed = vec![false; kp];
        for row in &paths {
            for (l, p) in row.iter().enumerate() {
                if matches!(p, MemoryPath::Scan) {
                    scan_needed[l] = true;
                }
            }
        }
        let streams = (0..kp)
            .map(|k| {
                (0..config.populations[k].size)
                    .map(|i| PrmStream::new(seed, key_map(UnitKey::new(k, i)), config.prm))
                    .collect()
            })
            .collect();
        let ages: Vec<Vec<f64>> = config
            .populations
            .iter()
            .enumerate()
            .map(|(k, p)| {
                (0..p.size)
                    .map(|i| {
                        let mut rng =
                            unit_rng(seed, key_map(UnitKey::new(k, i)), TAG_INITIAL_AGE);
                        p.initial_age_law.sample(&mut rng)
                    })
                    .collect()
            })
            .collect();
        let birth = ages
            .iter()
            .map(|row| row.iter().map(|a| -a).collect())
            .collect();
        Ok(Engine {
            config,
            scale,
            window: config.thinning_window(),
            t_cur: 0.0,
            initial_ages: ages,
            birth,
            paths,
            scan_events: vec![VecDeque::new(); kp],
            scan_needed,
            inherited_points,
            streams,
            max_horizon: config.kernel_matrix.max_horizon(),
        })
    }

    /// Memory of population `k` at `t >= t_cur`, assuming no events in
    /// `(t_cur, t]`.
    fn memory_at(&self, k: usize, t: f64) -> f64 {
        let mut x = self.config.populations[k].initial_signal.value(t);
        for (l, path) in self.paths[k].iter().enumerate() {
            match path {
                MemoryPath::Zero => {}
                MemoryPath::Cascade(c) => x += c.peek_x0(t - self.t_cur),
                MemoryPath::Scan => {
                    let kernel = self.config.kernel_matrix.entry(k, l);
                    for &tau in &self.scan_events[l] {
                        let lag = t - tau;
                        if lag <= self.max_horizon {
                            x += self.scale * kernel.eval_raw(lag);
                        }
                    }
                    for &s in &self.inherited_points[l] {
                        x += self.scale * kernel.eval_raw(t - s);
                    }
                }
            }
        }
        x
    }

    /// Upper bound for `|X_k|` over `(t_cur, t_cur + w]` with no events.
    fn memory_window_bound(&self, k: usize, w: f64) -> f64 {
        let mut bound = self.config.populations[k]
            .initial_signal
            .window_bound(self.t_cur, w);
        for (l, path) in self.paths[k].iter().enumerate() {
            match path {
                MemoryPath::Zero => {}
                MemoryPath::Cascade(c) => bound += c.x0_window_bound(w),
                MemoryPath::Scan => {
                    let kernel = self.config.kernel_matrix.entry(k, l);
                    for &tau in &self.scan_events[l] {
                        bound += self.scale * kernel.envelope_raw((self.t_cur - tau).max(0.0));
                    }
                    for &s in &self.inherited_points[l] {
                        bound += self.scale * kernel.envelope_raw(self.t_cur - s);
                    }
                }
            }
        }
        bound
    }

    fn advance_to(&mut self, t: f64) {
        for row in &mut self.paths {
            for path in row {
                if let MemoryPath::Cascade(c) = path {
                    c.advance_to(t);
                }
            }
        }
        // prune scan histories that fell past every kernel horizon
        for q in &mut self.scan_events {
            while let Some(&front) = q.front() {
                if t - front > self.max_horizon {
                    q.pop_front();
                } else {
                    break;
                }
            }
        }
        self.t_cur = t;
    }

    fn apply_event(&mut self, source_pop: usize) {
        for row in &mut self.paths {
            if let MemoryPath::Cascade(c) = &mut row[source_pop] {
                c.on_event();
            }
        }
        if self.scan_needed[source_pop] {
            self.scan_events[source_pop].push_back(self.t_cur);
        }
    }
}

/// Exact thinning sample of the network; streams are keyed by
/// `(seed, population, unit)`, so equal seeds share their noise.
pub fn simulate(config: &NetworkConfig, seed: u64) -> Result<EventLog> {
    simulate_opts(config, seed, false)
}

pub fn simulate_opts(config: &NetworkConfig, seed: u64, audit: bool) -> Result<EventLog> {
    simulate_with_key_map(config, seed, audit, &|k| k)
}

/// As `simulate`, but with remapped stream keys; exchangeability says a
/// permutation of unit keys within a population permutes the log identically.
pub fn simulate_with_key_map(
    config: &NetworkConfig,
    seed: u64,
    audit: bool,
    key_map: &dyn Fn(UnitKey) -> UnitKey,
) -> Result<EventLog> {
    config.validate()?;
    let mut eng = Engine::new(config, seed, key_map)?;
    let horizon = config.horizon_time;
    let cap = config.explosion_cap.unwrap_or(DEFAULT_EXPLOSION_CAP);
    let restart_on_event = !config.kernel_matrix.all_zero();
    let mut events: Vec<EventRecord> = Vec::new();
    let mut audit_log = if audit { Some(Vec::new()) } else { None };
    let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();

    'outer: while eng.t_cur < horizon {
        let w_end = (eng.t_cur + eng.window).min(horizon);
        let w = w_end - eng.t_cur;
        let majorants: Vec<f64> = (0..config.populations.len())
            .map(|k| {
                let x_ub = eng.memory_window_bound(k, w);
                config.populations[k].rate.sublinear_majorant(x_ub)
            })
            .collect();

        candidates.clear();
        for (k, pop) in config.populations.iter().enumerate() {
            if majorants[k] <= 0.0 {
                continue;
            }
            for i in 0..pop.size {
                for p in eng.streams[k][i].points_in(eng.t_cur, w_end, majorants[k]) {
                    candidates.push((p.time, p.mark, k, i));
                }
            }
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });

        let mut restart_at: Option<f64> = None;
        for &(s, z, k, i) in &candidates {
            if let Some(at) = restart_at {
                // after an accepted event only time-ties are still valid
                if s > at {
                    break;
                }
            }
            let x = eng.memory_at(k, s);
            let age = s - eng.birth[k][i];
            let rate = &config.populations[k].rate;
            let lam = rate.psi(x, age);
            if lam < 0.0 {
                return Err(Error::Model(format!(
                    "rate returned negative intensity {lam} at t={s}"
                )));
            }
            if lam > rate.lipschitz_l * (1.0 + x.abs()) + DOMINATION_TOL {
                return Err(Error::Model(format!(
                    "sub-linear bound violated: psi={lam} > L(1+|x|)={} at t={s}",
                    rate.lipschitz_l * (1.0 + x.abs())
                )));
            }
            if restart_at.is_none() && lam > majorants[k] + DOMINATION_TOL {
                return Err(Error::Model(format!(
                    "window majorant violated: psi={lam} > {} at t={s}; \
                     declared rate constants are inconsistent",
                    majorants[k]
                )));
            }
            let accepted = z <= lam;
            if let Some(log) = audit_log.as_mut() {
                log.push(CandidateAudit {
                    time: s,
                    population: k as u32,
                    unit: i as u32,
                    mark: z,
                    intensity: lam,
                    memory: x,
                    accepted,
                });
            }
            if accepted {
                eng.advance_to(s);
                eng.apply_event(k);
                eng.birth[k][i] = s;
                events.push(EventRecord {
                    time: s,
                    population: k as u32,
                    unit: i as u32,
                });
                if events.len() > cap {
                    return Err(Error::Model(format!(
                        "explosion guard: more than {cap} events accepted \
                         (last at t={s}); check kernel integrability and the post-jump bound"
                    )));
                }
                if restart_on_event {
                    restart_at = Some(s);
                }
            }
        }
        if restart_at.is_some() {
            // eng.t_cur sits at the accepted event; re-derive the window there
            continue 'outer;
        }
        eng.advance_to(w_end);
    }

    let final_ages = eng
        .birth
        .iter()
        .map(|row| row.iter().map(|b| horizon - b).collect())
        .collect();
    eng.advance_to(horizon);
    let final_memory = (0..config.populations.len())
        .map(|k| eng.memory_at(k, horizon))
        .collect();
    Ok(EventLog {
        config: config.clone(),
        seed,
        events,
        initial_ages: eng.initial_ages.clone(),
        final_ages,
        final_memory,
        horizon,
        audit: audit_log,
    })
}

/// Brute-force per-population memory at `t` recomputed from a log: the sum of
/// `scale * h_kl(t - tau)` over all logged events before `t`, plus the signal.
/// This is the oracle path, O(events) per point.
pub fn memory_at_brute(log: &EventLog, population: usize, t: f64) -> f64 {
    let config = &log.config;
    let scale = config.scale();
    let mut x = config.populations[population].initial_signal.value(t);
    for e in &log.events {
        if e.time >= t {
            break;
        }
        let kernel = config.kernel_matrix.entry(population, e.population as usize);
        x += scale * kernel.eval_raw(t - e.time);
    }
    for (l, p) in config.populations.iter().enumerate() {
        if let InitialSignal::Inherited { point_times } = &p.initial_signal {
            let kernel = config.kernel_matrix.entry(population, l);
            for &s in point_times {
                x += scale * kernel.eval_raw(t - s);
            }
        }
    }
    x
}

/// Left-limit intensity of every unit along a grid, recomputed from the log.
pub fn intensity_trace(log: &EventLog, grid: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    for &t in grid {
        if !(0.0..=log.horizon).contains(&t) {
            return Err(Error::Domain(format!(
                "trace grid point {t} outside [0, {}]",
                log.horizon
            )));
        }
    }
    let config = &log.config;
    let mut out = Vec::with_capacity(config.populations.len());
    for (k, pop) in config.populations.iter().enumerate() {
        let mut per_unit = vec![Vec::with_capacity(grid.len()); pop.size];
        for &t in grid {
            let x = memory_at_brute(log, k, t);
            for (i, trace) in per_unit.iter_mut().enumerate() {
                let age = log.age_at(k, i, t);
                trace.push(pop.rate.psi(x, age));
            }
        }
        out.push(per_unit);
    }
    Ok(out)
}

/// Per-population memory along a grid via the fast cascade/scan replay
/// (left limits, matching `memory_at_brute` within quadrature-free exactness).
pub fn memory_trace(log: &EventLog, grid: &[f64]) -> Vec<Vec<f64>> {
    let config = &log.config;
    let kp = config.populations.len();
    let scale = config.scale();
    let mut replay: Vec<Vec<Option<CascadeState>>> = (0..kp)
        .map(|k| {
            (0..kp)
                .map(|l| {
                    let kernel = config.kernel_matrix.entry(k, l);
                    match &kernel.kind {
                        KernelKind::Erlang { b, nu_per_time, n } if !kernel.is_zero() => {
                            let pts: &[f64] = match &config.populations[l].initial_signal {
                                InitialSignal::Inherited { point_times } => point_times,
                                _ => &[],
                            };
                            Some(
                                CascadeState::init_from_point_measure(
                                    scale * b,
                                    *nu_per_time,
                                    *n,
                                    pts,
                                )
                                .expect("validated kernel"),
                            )
                        }
                        _ => None,
                    }
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(grid.len()); kp];
    let mut ev_idx = 0;
    for &t in grid {
        while ev_idx < log.events.len() && log.events[ev_idx].time < t {
            let e = &log.events[ev_idx];
            for row in replay.iter_mut() {
                if let Some(c) = &mut row[e.population as usize] {
                    c.advance_to(e.time);
                    c.on_event();
                }
            }
            ev_idx += 1;
        }
        for (k, trace) in out.iter_mut().enumerate() {
            let mut x = config.populations[k].initial_signal.value(t);
            for (l, c) in replay[k].iter().enumerate() {
                match c {
                    Some(c) => x += c.peek_x0(t - c.last_update),
                    None => {
                        let kernel = config.kernel_matrix.entry(k, l);
                        if !kernel.is_zero() {
                            for e in &log.events[..ev_idx] {
                                if e.population as usize == l {
                                    x += scale * kernel.eval_raw(t - e.time);
                                }
                            }
                            if let InitialSignal::Inherited { point_times } =
                                &config.populations[l].initial_signal
                            {
                                for &s in point_times {
                                    x += scale * kernel.eval_raw(t - s);
                                }
                            }
                        }
                    }
                }
            }
            trace.push(x);
        }
    }
    out
}

/// Sliding-window time average `1/(T - T_w) int_{T_w}^T f(events in (s - T_w, s]) ds`,
/// approximated on `grid_points` midpoints; the ergodic-average estimator.
pub fn time_average<F: Fn(&[EventRecord]) -> f64>(
    log: &EventLog,
    f: F,
    window: f64,
    grid_points: usize,
) -> Result<f64> {
    if !(window > 0.0) || window > log.horizon {
        return Err(Error::Domain(format!(
            "window {window} must lie in (0, horizon={}]",
            log.horizon
        )));
    }
    let t0 = window;
    let t1 = log.horizon;
    if t1 <= t0 {
        return Err(Error::Domain("horizon shorter than window".into()));
    }
    let n = grid_points.max(1);
    let step = (t1 - t0) / n as f64;
    let mut lo = 0usize;
    let mut hi = 0usize;
    let mut acc = 0.0;
    for j in 0..n {
        let s = t0 + (j as f64 + 0.5) * step;
        while hi < log.events.len() && log.events[hi].time <= s {
            hi += 1;
        }
        while lo < hi && log.events[lo].time <= s - window {
            lo += 1;
        }
        acc += f(&log.events[lo..hi]);
    }
    Ok(acc / n as f64)
}

/// Parameters of the one-dimensional dominating process started at `t = 0`.
/// The paper's two-sided `int_{-inf}^0 hbar d pi_NK` term is replaced by the
/// constant `pre_zero_contribution`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominatingParams {
    #[serde(default)]
    pub initial_age_time: f64,
    #[serde(default)]
    pub pre_zero_contribution: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_override: Option<f64>,
}

impl Default for DominatingParams {
    fn default() -> Self {
        DominatingParams {
            initial_age_time: 0.0,
            pre_zero_contribution: 0.0,
            c_override: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DominatingLog {
    pub events: Vec<EventRecord>,
    pub lambda_at_events: Vec<f64>,
    pub c_constant: f64,
    pub l_constant: f64,
    pub k_constant: f64,
    /// `sum_{k>=1} hbar(k delta)` at unit level.
    pub envelope_series: f64,
    pub horizon: f64,
}

/// Simulate the dominating process `Zhat` of the whole network: intensity
/// `L (C + int hbar d pi_NK + hbar(Ahat))` driven by the superposed streams.
/// Every point of any truncated measure `pi^i_K` is one of its jumps, and if
/// the network is simulated on the same seed, every network event time is a
/// `Zhat` event time.
pub fn simulate_dominating(
    config: &NetworkConfig,
    seed: u64,
    params: &DominatingParams,
) -> Result<DominatingLog> {
    config.validate()?;
    let delta = config
        .populations
        .iter()
        .map(|p| p.rate.delta())
        .fold(f64::INFINITY, f64::min);
    if !(delta > 0.0) && !config.kernel_matrix.all_zero() {
        return Err(Error::Unsupported(
            "dominating process needs a positive post-jump window (the envelope \
             series over k*delta diverges at delta = 0)"
                .into(),
        ));
    }
    let l_const = config
        .populations
        .iter()
        .map(|p| p.rate.lipschitz_l)
        .fold(1.0, f64::max);
    let k_const = config
        .populations
        .iter()
        .map(|p| p.rate.postjump_bound_k)
        .fold(0.0, f64::max);
    let unit_counts: Vec<usize> = config.populations.iter().map(|p| p.size).collect();
    let hbar = |t: f64| config.kernel_matrix.summed_envelope_scaled(&unit_counts, t, config.scale());
    let max_horizon = config.kernel_matrix.max_horizon();

    // series sum_{j>=1} hbar(j delta), finite by truncation
    let mut series = 0.0;
    if config.kernel_matrix.all_zero() {
        // nothing to sum
    } else {
        let mut j = 1u64;
        while (j as f64) * delta <= max_horizon {
            series += hbar(j as f64 * delta);
            j += 1;
        }
    }
    // sup_t sum_i |R^i_t|, bounded at t = 0 for the decaying kinds
    let mut r_bound = 0.0;
    for (k, p) in config.populations.iter().enumerate() {
        let direct = p.initial_signal.window_bound(0.0, 0.0);
        r_bound += p.size as f64 * direct;
        if let InitialSignal::Inherited { point_times } = &p.initial_signal {
            for (kk, pp) in config.populations.iter().enumerate() {
                let kernel = config.kernel_matrix.entry(kk, k);
                let per_unit: f64 = point_times
                    .iter()
                    .map(|&s| config.scale() * kernel.envelope_raw(-s))
                    .sum();
                r_bound += pp.size as f64 * per_unit;
            }
        }
    }
    let c_const = params
        .c_override
        .unwrap_or_else(|| k_const.max(1.0 + series + r_bound));

    let mut streams: Vec<Vec<PrmStream>> = (0..config.populations.len())
        .map(|k| {
            (0..config.populations[k].size)
                .map(|i| PrmStream::new(seed, UnitKey::new(k, i), config.prm))
                .collect()
        })
        .collect();

    let horizon = config.horizon_time;
    let mut birth = -params.initial_age_time;
    let mut pik: Vec<f64> = Vec::new(); // pi_NK points so far, pruned
    let mut events = Vec::new();
    let mut lambdas = Vec::new();
    let pre = params.pre_zero_contribution;
    let lambda_hat = |t: f64, birth: f64, pik: &[f64]| -> f64 {
        let mut s = pre + hbar(t - birth);
        for &tau in pik {
            if t - tau <= max_horizon {
                s += hbar(t - tau);
            }
        }
        l_const * (c_const + s)
    };

    let window = config.thinning_window();
    let mut t_cur = 0.0;
    let cap = config.explosion_cap.unwrap_or(DEFAULT_EXPLOSION_CAP);
    'outer: while t_cur < horizon {
        let w_end = (t_cur + window).min(horizon);
        // lambda_hat is non-increasing between its own jumps
        let ceiling = lambda_hat(t_cur, birth, &pik) + 1e-12;
        let mut cands: Vec<(f64, f64, usize, usize)> = Vec::new();
        for (k, row) in streams.iter_mut().enumerate() {
            for (i, s) in row.iter_mut().enumerate() {
                for p in s.points_in(t_cur, w_end, ceiling) {
                    cands.push((p.time, p.mark, k, i));
                }
            }
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
        for (s, z, k, i) in cands {
            let lam = lambda_hat(s, birth, &pik);
            if z <= lam {
                if z <= k_const {
                    pik.push(s);
                }
                birth = s;
                events.push(EventRecord {
                    time: s,
                    population: k as u32,
                    unit: i as u32,
                });
                lambdas.push(lam);
                if events.len() > cap {
                    return Err(Error::Model("explosion guard in dominating process".into()));
                }
                pik.retain(|&tau| s - tau <= max_horizon);
                t_cur = s;
                continue 'outer;
            }
        }
        t_cur = w_end;
    }

    Ok(DominatingLog {
        events,
        lambda_at_events: lambdas,
        c_constant: c_const,
        l_constant: l_const,
        k_constant: k_const,
        envelope_series: series,
        horizon,
    })
}

/// Both sides of the history bound: the influence kernel summed over the
/// source unit's logged events before `t1` against the envelope series plus
/// the truncated-PRM envelope integral.
#[derive(Debug, Clone, Serialize)]
pub struct DominationBound {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn domination_bound_check(
    log: &EventLog,
    target: (usize, usize),
    source: (usize, usize),
    t1: f64,
    t2: f64,
) -> Result<DominationBound> {
    if !(0.0 <= t1 && t1 <= t2 && t2 <= log.horizon) {
        return Err(Error::Domain(format!(
            "need 0 <= t1 <= t2 <= horizon, got {t1}, {t2}"
        )));
    }
    let config = &log.config;
    let (tk, _ti) = target;
    let (sk, si) = source;
    let kernel = config.kernel_matrix.entry(tk, sk);
    let scale = config.scale();
    let delta = config.populations[sk].rate.delta();
    if !(delta > 0.0) {
        return Err(Error::Unsupported(
            "the history bound needs a positive post-jump window".into(),
        ));
    }
    let k_const = config.populations[sk].rate.postjump_bound_k;

    let source_events = log.unit_events(sk, si);
    let lhs: f64 = source_events
        .iter()
        .filter(|&&tau| tau < t1)
        .map(|&tau| scale * kernel.eval_raw(t2 - tau))
        .sum::<f64>()
        .abs();

    let age_t1 = log.age_at(sk, si, t1);
    let mut rhs = 0.0;
    let mut m = 0u64;
    let horizon = kernel.truncation_horizon();
    loop {
        let arg = t2 - t1 + age_t1 + m as f64 * delta;
        if arg > horizon {
            break;
        }
        rhs += scale * kernel.envelope_raw(arg);
        m += 1;
    }
    let cutoff = t1 - age_t1;
    if cutoff > 0.0 && k_const > 0.0 {
        let mut stream = PrmStream::new(log.seed, UnitKey::new(sk, si), config.prm);
        for s in stream.truncated_events(0.0, cutoff, k_const) {
            rhs += scale * kernel.envelope_raw(t2 - s);
        }
    }
    Ok(DominationBound {
        lhs,
        rhs,
        pass: lhs <= rhs + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::rates::ScalarMap;

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

    fn constant_rate(c: f64) -> RateSpec {
        RateSpec::custom(move |_, _| c, 1.0f64.max(c), c, 0.0).unwrap()
    }

    fn hard_one() -> RateSpec {
        RateSpec::hard_refractory(ScalarMap::constant(1.0), 1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_rate_is_poisson() {
        let c = 2.0;
        let t = 50.0;
        let config = single_pop(constant_rate(c), KernelSpec::zero(), t);
        let runs = 40;
        let total: usize = (0..runs)
            .map(|s| simulate(&config, s).unwrap().events.len())
            .sum();
        let mean = total as f64 / runs as f64;
        let sigma = (c * t / runs as f64).sqrt();
        assert!((mean - c * t).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn zero_rate_gives_empty_log() {
        let config = single_pop(constant_rate(0.0), KernelSpec::zero(), 100.0);
        let log = simulate(&config, 1).unwrap();
        assert!(log.events.is_empty());
        assert_eq!(log.final_ages[0][0], 100.0);
    }

    #[test]
    fn renewal_rate_is_one_half() {
        // gaps are delta + Exp(1): mean 2, so the empirical rate approaches 0.5
        let t = 4000.0;
        let config = single_pop(hard_one(), KernelSpec::zero(), t);
        let log = simulate(&config, 7).unwrap();
        let rate = log.events.len() as f64 / t;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn single_jump_memory_response() {
        // unit 1's memory picks up 5 e^{-(t - tau)} after each jump of unit 2
        let config = NetworkConfig {
            populations: vec![
                PopulationConfig {
                    size: 1,
                    rate: constant_rate(0.0),
                    initial_signal: InitialSignal::Zero,
                    initial_age_law: AgeLaw::PointMass { age_time: 0.0 },
                },
                PopulationConfig {
                    size: 1,
                    rate: constant_rate(0.3),
                    initial_signal: InitialSignal::Zero,
                    initial_age_law: AgeLaw::PointMass { age_time: 0.0 },
                },
            ],
            kernel_matrix: KernelMatrix {
                entries: vec![
                    vec![KernelSpec::zero(), KernelSpec::erlang(5.0, 1.0, 0).unwrap()],
                    vec![KernelSpec::zero(), KernelSpec::zero()],
                ],
                scale: 1.0,
            },
            horizon_time: 10.0,
            mode: Mode::FiniteNetwork,
            prm: PrmParams::default(),
            thinning_window_time: None,
            explosion_cap: None,
        };
        let log = simulate(&config, 3).unwrap();
        let jumps = log.unit_events(1, 0);
        assert!(!jumps.is_empty());
        let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let trace = memory_trace(&log, &grid);
        for (j, &t) in grid.iter().enumerate() {
            let expect: f64 = jumps
                .iter()
                .filter(|&&tau| tau < t)
                .map(|&tau| 5.0 * (-(t - tau)).exp())
                .sum();
            assert!(
                (trace[0][j] - expect).abs() < 1e-9,
                "t={t}: {} vs {expect}",
                trace[0][j]
            );
        }
    }

    #[test]
    fn memory_trace_matches_brute_force() {
        let config = NetworkConfig {
            populations: vec![
                PopulationConfig {
                    size: 2,
                    rate: RateSpec::hard_refractory(ScalarMap::constant(1.5), 0.4, 1.5).unwrap(),
                    initial_signal: InitialSignal::ExpDecay {
                        amplitude: 0.5,
                        rate_per_time: 1.0,
                    },
                    initial_age_law: AgeLaw::Uniform { max_time: 1.0 },
                },
                PopulationConfig {
                    size: 1,
                    rate: hard_one(),
                    initial_signal: InitialSignal::Inherited {
                        point_times: vec![-0.5, -2.0],
                    },
                    initial_age_law: AgeLaw::PointMass { age_time: 2.0 },
                },
            ],
            kernel_matrix: KernelMatrix {
                entries: vec![
                    vec![
                        KernelSpec::erlang(-0.8, 1.0, 2).unwrap(),
                        KernelSpec::erlang(0.6, 2.0, 0).unwrap(),
                    ],
                    vec![
                        KernelSpec::piecewise_constant(vec![0.0, 0.5, 1.5], vec![0.4, -0.2])
                            .unwrap(),
                        KernelSpec::erlang(0.3, 1.0, 1).unwrap(),
                    ],
                ],
                scale: 1.0,
            },
            horizon_time: 30.0,
            mode: Mode::FiniteNetwork,
            prm: PrmParams::default(),
            thinning_window_time: None,
            explosion_cap: None,
        };
        let log = simulate(&config, 11).unwrap();
        assert!(log.events.len() > 20);
        let grid: Vec<f64> = (0..100).map(|i| 0.3 * i as f64).collect();
        let trace = memory_trace(&log, &grid);
        for (j, &t) in grid.iter().enumerate() {
            for k in 0..2 {
                let brute = memory_at_brute(&log, k, t);
                assert!(
                    (trace[k][j] - brute).abs() < 1e-9,
                    "pop {k} t={t}: cascade {} vs brute {brute}",
                    trace[k][j]
                );
            }
        }
    }

    #[test]
    fn intensity_trace_examples() {
        let c = 1.3;
        let config = single_pop(constant_rate(c), KernelSpec::zero(), 20.0);
        let log = simulate(&config, 5).unwrap();
        let grid = vec![0.0, 3.3, 11.7, 20.0];
        let tr = intensity_trace(&log, &grid).unwrap();
        for v in &tr[0][0] {
            assert_eq!(*v, c);
        }

        let config = single_pop(hard_one(), KernelSpec::zero(), 50.0);
        let log = simulate(&config, 5).unwrap();
        // inside the refractory window after any event the intensity vanishes
        let probes: Vec<f64> = log.events.iter().map(|e| e.time + 0.5).collect();
        let tr = intensity_trace(&log, &probes).unwrap();
        for (j, &t) in probes.iter().enumerate() {
            if log.age_at(0, 0, t) < 1.0 {
                assert_eq!(tr[0][0][j], 0.0);
            }
        }
    }

    #[test]
    fn hard_refractory_pathwise_invariants() {
        let delta = 0.7;
        let config = single_pop(
            RateSpec::hard_refractory(ScalarMap::constant(2.0), delta, 2.0).unwrap(),
            KernelSpec::erlang(0.4, 1.0, 0).unwrap(),
            200.0,
        );
        let log = simulate(&config, 13).unwrap();
        let times = log.unit_events(0, 0);
        assert!(!times.is_empty());
        assert!(times[0] > 0.0, "no event at t = 0");
        for w in times.windows(2) {
            assert!(w[1] > w[0], "strictly increasing");
            assert!(w[1] - w[0] > delta, "age reset enforces delta gaps");
        }
        // pathwise non-explosion: at most ceil(T/delta) + 1 events per window
        let t_win = 10.0;
        let bound = (t_win / delta).ceil() as usize + 1;
        let mut lo = 0;
        for hi in 0..times.len() {
            while times[hi] - times[lo] > t_win {
                lo += 1;
            }
            assert!(hi - lo + 1 <= bound);
        }
    }

    #[test]
    fn exchangeable_units_permute_with_their_streams() {
        let mut config = single_pop(hard_one(), KernelSpec::erlang(-0.5, 1.0, 0).unwrap(), 60.0);
        config.populations[0].size = 2;
        config.populations[0].initial_age_law = AgeLaw::Uniform { max_time: 2.0 };
        let log = simulate(&config, 21).unwrap();
        let swapped = simulate_with_key_map(&config, 21, false, &|k| UnitKey {
            population: k.population,
            unit: 1 - k.unit,
        })
        .unwrap();
        assert_eq!(log.events.len(), swapped.events.len());
        for (a, b) in log.events.iter().zip(&swapped.events) {
            assert_eq!(a.time, b.time);
            assert_eq!(a.unit, 1 - b.unit);
        }
    }

    #[test]
    fn initial_signal_drives_intensity_exactly() {
        // psi(x, a) = max(x, 0) with R_t = e^{-t} and no kernels: lambda = e^{-t}
        let rate = RateSpec::custom(|x: f64, _| x.max(0.0), 1.0, 1.0, 0.0).unwrap();
        let mut config = single_pop(rate, KernelSpec::zero(), 5.0);
        config.populations[0].initial_signal = InitialSignal::ExpDecay {
            amplitude: 1.0,
            rate_per_time: 1.0,
        };
        let log = simulate(&config, 2).unwrap();
        let grid = vec![0.1, 0.9, 2.2, 4.4];
        let tr = intensity_trace(&log, &grid).unwrap();
        for (j, &t) in grid.iter().enumerate() {
            assert!((tr[0][0][j] - (-t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn inherited_points_flow_through_cascade() {
        let mut config = single_pop(constant_rate(0.0), KernelSpec::erlang(2.0, 1.0, 1).unwrap(), 5.0);
        config.populations[0].initial_signal = InitialSignal::Inherited {
            point_times: vec![-1.0],
        };
        let log = simulate(&config, 1).unwrap();
        assert!(log.events.is_empty());
        let h = KernelSpec::erlang(2.0, 1.0, 1).unwrap();
        let grid = vec![0.0, 0.7, 2.0];
        let tr = memory_trace(&log, &grid);
        for (j, &t) in grid.iter().enumerate() {
            assert!((tr[0][j] - h.eval_raw(t + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn explosion_guard_fires_on_supercritical_model() {
        let rate = RateSpec::custom(|x: f64, _| 1.0 + x.abs(), 1.0, 1.0, 0.0).unwrap();
        let mut config = single_pop(rate, KernelSpec::erlang(3.0, 0.5, 0).unwrap(), 50.0);
        config.explosion_cap = Some(100);
        let err = simulate(&config, 1).unwrap_err();
        assert!(matches!(err, Error::Model(_)), "{err}");
    }

    #[test]
    fn dominating_process_is_poisson_for_zero_kernels() {
        // h = 0, K = 1, L = 1 gives C = 1 and a rate-1 Poisson process
        let config = single_pop(
            RateSpec::custom(|_, _| 0.4, 1.0, 1.0, 1.0).unwrap(),
            KernelSpec::zero(),
            80.0,
        );
        let runs = 30;
        let mut total = 0usize;
        for s in 0..runs {
            let dom = simulate_dominating(&config, s, &DominatingParams::default()).unwrap();
            assert_eq!(dom.c_constant, 1.0);
            for l in &dom.lambda_at_events {
                assert_eq!(*l, 1.0);
            }
            total += dom.events.len();
        }
        let mean = total as f64 / runs as f64;
        let sigma = (80.0 / runs as f64).sqrt();
        assert!((mean - 80.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    fn inhibitory_pair(horizon: f64) -> NetworkConfig {
        let f = ScalarMap::Logistic {
            cap: 2.0,
            slope: 1.0,
            center: 0.0,
        };
        let rate = RateSpec::hard_refractory(f, 1.0, 2.0).unwrap();
        NetworkConfig {
            populations: vec![PopulationConfig {
                size: 2,
                rate,
                initial_signal: InitialSignal::Zero,
                initial_age_law: AgeLaw::PointMass { age_time: 0.5 },
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
    fn dominating_process_covers_network_events() {
        let config = inhibitory_pair(60.0);
        for seed in [1, 2, 3] {
            let net = simulate(&config, seed).unwrap();
            let dom = simulate_dominating(&config, seed, &DominatingParams::default()).unwrap();
            assert!(!net.events.is_empty());
            let dom_times: Vec<f64> = dom.events.iter().map(|e| e.time).collect();
            for e in &net.events {
                assert!(
                    dom_times.iter().any(|&t| t == e.time),
                    "network event at {} missing from dominating log",
                    e.time
                );
            }
        }
    }

    #[test]
    fn domination_bound_holds_on_refractory_runs() {
        let config = inhibitory_pair(80.0);
        let log = simulate(&config, 5).unwrap();
        // no events before t1
        let early = domination_bound_check(&log, (0, 0), (0, 1), 1e-6, 0.5).unwrap();
        assert_eq!(early.lhs, 0.0);
        assert!(early.pass);
        // a grid of (t1, t2) pairs
        for i in 1..20 {
            let t1 = 4.0 * i as f64;
            for dt in [0.0, 0.5, 3.0] {
                let b = domination_bound_check(&log, (0, 0), (0, 1), t1, t1 + dt).unwrap();
                assert!(b.pass, "t1={t1} dt={dt}: lhs {} rhs {}", b.lhs, b.rhs);
            }
        }
    }

    #[test]
    fn time_average_examples() {
        let c = 1.5;
        let config = single_pop(constant_rate(c), KernelSpec::zero(), 600.0);
        let log = simulate(&config, 9).unwrap();
        let ones = time_average(&log, |_| 1.0, 5.0, 500).unwrap();
        assert_eq!(ones, 1.0);
        let tw = 5.0;
        let counts = time_average(&log, |ev| ev.len() as f64, tw, 500).unwrap();
        assert!((counts - c * tw).abs() < 0.6, "counts {counts}");
        // hard refractory renewal: rate 1/(delta + 1) = 0.5
        let config = single_pop(hard_one(), KernelSpec::zero(), 2000.0);
        let log = simulate(&config, 9).unwrap();
        let counts = time_average(&log, |ev| ev.len() as f64, 10.0, 400).unwrap();
        assert!((counts - 5.0).abs() < 0.5, "counts {counts}");
        assert!(time_average(&log, |_| 1.0, 5000.0, 10).is_err());
    }

    #[test]
    fn audit_records_candidates() {
        let config = single_pop(hard_one(), KernelSpec::zero(), 50.0);
        let log = simulate_opts(&config, 4, true).unwrap();
        let audit = log.audit.as_ref().unwrap();
        assert!(!audit.is_empty());
        let accepted: Vec<_> = audit.iter().filter(|c| c.accepted).collect();
        assert_eq!(accepted.len(), log.events.len());
        for c in audit.iter() {
            assert!(c.intensity <= 1.0 * (1.0 + c.memory.abs()) + 1e-9);
            assert_eq!(c.accepted, c.mark <= c.intensity);
        }
    }
}
