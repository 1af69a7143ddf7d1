//! Per-second client positions, computed once and shared by the harness
//! and the oracle.

use mqttg::GeoPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Movement, Scenario};

/// `positions[client][second]` for seconds `0..=duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    positions: Vec<Vec<GeoPoint>>,
}

impl Trajectories {
    pub fn compute(s: &Scenario) -> Self {
        let positions = s
            .clients
            .iter()
            .enumerate()
            .map(|(i, c)| track(&c.movement, s.seed, i, s.duration_s))
            .collect();
        Trajectories { positions }
    }

    /// Position of `client` at `second`, holding the last one afterwards.
    pub fn at(&self, client: usize, second: u64) -> GeoPoint {
        let track = &self.positions[client];
        track[(second as usize).min(track.len() - 1)]
    }

    /// Position at the last whole second before `time_ms`.
    pub fn at_ms(&self, client: usize, time_ms: u64) -> GeoPoint {
        self.at(client, time_ms / 1000)
    }
}

fn track(m: &Movement, seed: u64, index: usize, duration: u64) -> Vec<GeoPoint> {
    let seconds = 0..=duration;
    match m {
        Movement::Fixed(p) => seconds.map(|_| *p).collect(),
        Movement::Waypoints(w) => seconds.map(|t| interpolate(w, t)).collect(),
        Movement::RandomWalk { start, step } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
            let mut p = *start;
            let mut out = Vec::with_capacity(duration as usize + 1);
            out.push(p);
            for _ in 0..duration {
                if *step > 0.0 {
                    let dlat = rng.random_range(-step..=*step);
                    let dlon = rng.random_range(-step..=*step);
                    p = GeoPoint::new(
                        (p.latitude + dlat).clamp(-90.0, 90.0),
                        (p.longitude + dlon).clamp(-180.0, 180.0),
                    );
                }
                out.push(p);
            }
            out
        }
    }
}

fn interpolate(w: &[(u64, GeoPoint)], t: u64) -> GeoPoint {
    let (first_t, first) = w[0];
    if t <= first_t {
        return first;
    }
    for pair in w.windows(2) {
        let ((t0, a), (t1, b)) = (pair[0], pair[1]);
        if t <= t1 {
            let f = (t - t0) as f64 / (t1 - t0) as f64;
            return GeoPoint::new(
                a.latitude + f * (b.latitude - a.latitude),
                a.longitude + f * (b.longitude - a.longitude),
            );
        }
    }
    w[w.len() - 1].1
}
