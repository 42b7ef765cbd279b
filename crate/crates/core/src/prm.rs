//! Reproducible realizations of the driving Poisson random measures on
//! time x mark space.
//!
//! The plane is tiled into cells: vertical mark strips of fixed height and
//! time windows of fixed width. Each cell's points are generated from a
//! counter-based key `(seed, unit, strip, window)`, so any box query returns
//! the same points no matter which ceilings were used before — two coupled
//! simulations reading the same keys literally share their noise, and raising
//! the intensity majorant only uncovers new strips without disturbing the old
//! ones.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Identifies one unit's PRM within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitKey {
    pub population: u32,
    pub unit: u32,
}

impl UnitKey {
    pub fn new(population: usize, unit: usize) -> Self {
        UnitKey {
            population: population as u32,
            unit: unit as u32,
        }
    }
}

fn default_strip_height() -> f64 {
    16.0
}

fn default_window_width() -> f64 {
    1.0
}

/// Cell geometry for the strip construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrmParams {
    #[serde(default = "default_strip_height")]
    pub strip_height: f64,
    #[serde(default = "default_window_width")]
    pub window_width: f64,
}

impl Default for PrmParams {
    fn default() -> Self {
        PrmParams {
            strip_height: default_strip_height(),
            window_width: default_window_width(),
        }
    }
}

/// A single PRM point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrmPoint {
    pub time: f64,
    pub mark: f64,
}

/// One unit's Poisson random measure, realized lazily per cell and cached.
#[derive(Debug, Clone)]
pub struct PrmStream {
    seed: u64,
    key: UnitKey,
    params: PrmParams,
    cache: HashMap<(u32, u64), Vec<PrmPoint>>,
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one key, order-sensitively.
fn mix_key(words: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3; // pi fractional bits
    for &w in words {
        acc = splitmix64(acc ^ w);
    }
    acc
}

/// Derive an independent stream seed, e.g. one per experiment replicate.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    mix_key(&[seed, tag])
}

/// Deterministic generator for per-unit auxiliary draws (initial ages).
pub fn unit_rng(seed: u64, key: UnitKey, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(&[
        seed,
        key.population as u64,
        key.unit as u64,
        tag,
    ]))
}

/// Tag separating initial-age draws from PRM cells.
pub const TAG_INITIAL_AGE: u64 = 0xA9E1;

impl PrmStream {
    pub fn new(seed: u64, key: UnitKey, params: PrmParams) -> Self {
        assert!(
            params.strip_height > 0.0 && params.window_width > 0.0,
            "strip geometry must be positive"
        );
        PrmStream {
            seed,
            key,
            params,
            cache: HashMap::new(),
        }
    }

    pub fn key(&self) -> UnitKey {
        self.key
    }

    fn cell(&mut self, strip: u32, window: u64) -> &Vec<PrmPoint> {
        let (seed, key, params) = (self.seed, self.key, self.params);
        self.cache.entry((strip, window)).or_insert_with(|| {
            let cell_key = mix_key(&[
                seed,
                key.population as u64,
                key.unit as u64,
                strip as u64,
                window,
            ]);
            let mut rng = ChaCha8Rng::seed_from_u64(cell_key);
            let area = params.strip_height * params.window_width;
            let count = Poisson::new(area).unwrap().sample(&mut rng) as usize;
            let t0 = window as f64 * params.window_width;
            let m0 = strip as f64 * params.strip_height;
            let mut pts: Vec<PrmPoint> = (0..count)
                .map(|_| PrmPoint {
                    time: t0 + rng.gen::<f64>() * params.window_width,
                    mark: m0 + rng.gen::<f64>() * params.strip_height,
                })
                .collect();
            pts.sort_by(|a, b| a.time.total_cmp(&b.time));
            pts
        })
    }

    /// All PRM points in the box `(t1, t2] x (0, mark_ceiling]`, sorted by
    /// time. Repeated calls return identical results; a larger ceiling
    /// returns a superset.
    pub fn points_in(&mut self, t1: f64, t2: f64, mark_ceiling: f64) -> Vec<PrmPoint> {
        assert!(t1 >= 0.0 && t2 >= t1, "need 0 <= t1 <= t2");
        if mark_ceiling <= 0.0 || t2 == t1 {
            return Vec::new();
        }
        let w = self.params.window_width;
        let h = self.params.strip_height;
        let first_window = (t1 / w).floor() as u64;
        let last_window = (t2 / w).ceil() as u64;
        let strips = (mark_ceiling / h).ceil() as u32;
        let mut out = Vec::new();
        for window in first_window..last_window {
            for strip in 0..strips {
                for p in self.cell(strip, window) {
                    if p.time > t1 && p.time <= t2 && p.mark <= mark_ceiling {
                        out.push(*p);
                    }
                }
            }
        }
        out.sort_by(|a, b| a.time.total_cmp(&b.time));
        out
    }

    /// Times of points with mark at most `k` in `(t1, t2]` — the truncated
    /// measure `pi_K`.
    pub fn truncated_events(&mut self, t1: f64, t2: f64, k: f64) -> Vec<f64> {
        self.points_in(t1, t2, k).iter().map(|p| p.time).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> PrmStream {
        PrmStream::new(seed, UnitKey::new(0, 0), PrmParams::default())
    }

    #[test]
    fn zero_area_box_is_empty() {
        let mut s = stream(7);
        assert!(s.points_in(0.0, 1.0, 0.0).is_empty());
        assert!(s.points_in(0.0, 0.0, 1.0).is_empty());
        assert!(s.truncated_events(0.0, 5.0, 0.0).is_empty());
    }

    #[test]
    fn determinism_across_instances() {
        let mut a = stream(42);
        let mut b = stream(42);
        let pa = a.points_in(0.3, 9.7, 5.5);
        let pb = b.points_in(0.3, 9.7, 5.5);
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.time.to_bits(), y.time.to_bits());
            assert_eq!(x.mark.to_bits(), y.mark.to_bits());
        }
        // different unit keys decorrelate
        let mut c = PrmStream::new(42, UnitKey::new(0, 1), PrmParams::default());
        let pc = c.points_in(0.3, 9.7, 5.5);
        assert!(pa.len() != pc.len() || pa.iter().zip(&pc).any(|(x, y)| x.time != y.time));
    }

    #[test]
    fn superset_under_larger_ceiling() {
        let mut s = stream(11);
        let small = s.points_in(0.0, 20.0, 1.0);
        let mut s2 = stream(11);
        let large = s2.points_in(0.0, 20.0, 2.0);
        for p in &small {
            assert!(
                large.iter().any(|q| q.time == p.time && q.mark == p.mark),
                "point below the old ceiling vanished"
            );
        }
        assert!(large.len() >= small.len());
    }

    #[test]
    fn query_order_does_not_change_points() {
        // adaptive ceilings never disturb points below previously queried ceilings
        let mut a = stream(5);
        let low_first = a.points_in(0.0, 10.0, 1.5);
        let mut b = stream(5);
        let _ = b.points_in(0.0, 10.0, 7.0);
        let low_second = b.points_in(0.0, 10.0, 1.5);
        assert_eq!(low_first.len(), low_second.len());
        for (x, y) in low_first.iter().zip(&low_second) {
            assert_eq!(x.time.to_bits(), y.time.to_bits());
        }
    }

    #[test]
    fn unit_box_count_is_poisson_one() {
        // mean of 10^4 unit-box counts; 3 sigma band for Poisson(1) is 0.03
        let n = 10_000;
        let total: usize = (0..n)
            .map(|seed| stream(seed as u64).points_in(0.0, 1.0, 1.0).len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn disjoint_boxes_uncorrelated() {
        let n = 4000;
        let (mut sx, mut sy, mut sxy, mut sx2, mut sy2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for seed in 0..n {
            let mut s = stream(seed as u64);
            let x = s.points_in(0.0, 1.0, 2.0).len() as f64;
            let y = s.points_in(1.0, 2.0, 2.0).len() as f64;
            sx += x;
            sy += y;
            sxy += x * y;
            sx2 += x * x;
            sy2 += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sx2 / nf - (sx / nf).powi(2);
        let vy = sy2 / nf - (sy / nf).powi(2);
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.05, "corr {corr}");
        // variance of Poisson(2) is 2
        assert!((vx - 2.0).abs() < 0.2, "var {vx}");
    }

    #[test]
    fn truncated_event_rate_approaches_k() {
        let mut s = stream(3);
        let k = 2.5;
        let t = 4000.0;
        let count = s.truncated_events(0.0, t, k).len() as f64;
        let rate = count / t;
        // LLN: relative 3 sigma is 3 / sqrt(K T) ~ 0.03
        assert!((rate - k).abs() < 3.0 * (k / t).sqrt() + 0.02, "rate {rate}");
    }

    #[test]
    fn truncated_equals_points_in_times() {
        let mut s = stream(9);
        let pts = s.points_in(0.5, 30.0, 1.25);
        let mut s2 = stream(9);
        let times = s2.truncated_events(0.5, 30.0, 1.25);
        assert_eq!(times, pts.iter().map(|p| p.time).collect::<Vec<_>>());
    }
}
