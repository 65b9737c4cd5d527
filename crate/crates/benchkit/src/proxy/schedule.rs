//! Deterministic per-chunk delay and loss-penalty scheduling.
//!
//! Every relayed chunk draws one delay from the scenario's jitter
//! distribution and one loss decision per virtual TCP segment it spans. A
//! chunk with at least one lost segment is additionally held back by the
//! scenario's retransmission penalty. Releases are clamped to FIFO order so
//! the relay can never reorder bytes within a direction.
//!
//! All draws come from a seeded generator, so a fixed seed plus a fixed
//! sequence of chunk lengths reproduces the exact schedule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scenario::{LossModel, Scenario};

/// Outcome of scheduling one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkDecision {
    pub release_ns: u64,
    pub delay_ms: f64,
    pub segments: u32,
    pub lost_segments: u32,
    /// Zero when no segment was lost.
    pub penalty_ms: f64,
}

/// One-way delay draw: normal around the scenario latency with the jitter as
/// standard deviation, truncated at zero. Zero jitter means the exact latency.
pub fn sample_delay_ms(scenario: &Scenario, rng: &mut impl Rng) -> f64 {
    if scenario.jitter_ms == 0.0 {
        return scenario.latency_ms;
    }
    let normal = Normal::new(scenario.latency_ms, scenario.jitter_ms)
        .expect("scenario validated: finite latency, positive jitter");
    normal.sample(rng).max(0.0)
}

/// Per-segment Bernoulli loss draws for a chunk of `len` bytes.
/// Returns (segments, lost_segments).
pub fn draw_loss(
    len: usize,
    loss_pct: f64,
    segment_bytes: usize,
    rng: &mut impl Rng,
) -> (u32, u32) {
    let segments = len.div_ceil(segment_bytes.max(1)).max(1) as u32;
    if loss_pct <= 0.0 {
        return (segments, 0);
    }
    let p = loss_pct / 100.0;
    let mut lost = 0;
    for _ in 0..segments {
        if rng.random::<f64>() < p {
            lost += 1;
        }
    }
    (segments, lost)
}

/// Stateful scheduler for one direction of one connection.
pub struct ReleaseSchedule {
    scenario: Scenario,
    loss: LossModel,
    rng: ChaCha8Rng,
    prev_release_ns: u64,
}

impl ReleaseSchedule {
    pub fn new(scenario: Scenario, loss: LossModel, seed: u64) -> Self {
        Self {
            scenario,
            loss,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prev_release_ns: 0,
        }
    }

    /// Draw delay and loss for a chunk read at `now_ns` and return when it
    /// may be written out. Never earlier than the previous chunk's release.
    pub fn schedule_chunk(&mut self, len: usize, now_ns: u64) -> ChunkDecision {
        let delay_ms = sample_delay_ms(&self.scenario, &mut self.rng);
        let (segments, lost_segments) =
            draw_loss(len, self.scenario.loss_pct, self.loss.segment_bytes, &mut self.rng);
        let penalty_ms = if lost_segments > 0 {
            self.loss.penalty_ms(self.scenario.latency_ms)
        } else {
            0.0
        };
        let target_ns = now_ns + ms_to_ns(delay_ms + penalty_ms);
        let release_ns = target_ns.max(self.prev_release_ns);
        self.prev_release_ns = release_ns;
        ChunkDecision { release_ns, delay_ms, segments, lost_segments, penalty_ms }
    }
}

/// Run a schedule over `lens` with a synthetic zero clock. The result depends
/// only on the inputs, which makes whole-run schedules comparable.
pub fn replay_schedule(
    scenario: &Scenario,
    loss: &LossModel,
    seed: u64,
    lens: &[usize],
) -> Vec<ChunkDecision> {
    let mut schedule = ReleaseSchedule::new(scenario.clone(), loss.clone(), seed);
    lens.iter().map(|&len| schedule.schedule_chunk(len, 0)).collect()
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1_000_000.0).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forced_loss() -> Scenario {
        Scenario::new("drop", 0.0, 0.0, 100.0)
    }

    #[test]
    fn chunk_spanning_three_segments_draws_three_losses() {
        let mut schedule =
            ReleaseSchedule::new(forced_loss(), LossModel::default(), 1);
        let d = schedule.schedule_chunk(4380, 0);
        assert_eq!(d.segments, 3);
        assert_eq!(d.lost_segments, 3);
        assert_eq!(d.penalty_ms, 1.0); // floor penalty at zero latency
        assert_eq!(d.release_ns, 1_000_000);
    }

    #[test]
    fn empty_and_small_chunks_still_occupy_one_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(draw_loss(1, 0.0, 1460, &mut rng), (1, 0));
        assert_eq!(draw_loss(1460, 0.0, 1460, &mut rng), (1, 0));
        assert_eq!(draw_loss(1461, 0.0, 1460, &mut rng), (2, 0));
    }

    #[test]
    fn zero_jitter_means_exact_latency() {
        let scenario = Scenario::new("flat", 5.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(sample_delay_ms(&scenario, &mut rng), 5.0);
        }
    }

    #[test]
    fn optimal_draws_have_expected_location_and_spread() {
        let scenario = Scenario::optimal();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws: Vec<f64> = (0..10_000).map(|_| sample_delay_ms(&scenario, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((2.3..=2.7).contains(&mean), "mean {mean}");
        assert!((0.4..=0.6).contains(&var.sqrt()), "sd {}", var.sqrt());
        assert!(draws.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn same_seed_reproduces_the_whole_schedule() {
        let scenario = Scenario::worst();
        let loss = LossModel::default();
        let lens = [27usize, 1024, 4380, 2, 1_048_576, 100];
        let a = replay_schedule(&scenario, &loss, 7, &lens);
        let b = replay_schedule(&scenario, &loss, 7, &lens);
        assert_eq!(a, b);
        let c = replay_schedule(&scenario, &loss, 8, &lens);
        assert_ne!(a, c, "different seed must change the draws");
    }

    #[test]
    fn worst_scenario_penalty_value() {
        let mut schedule =
            ReleaseSchedule::new(Scenario::new("w", 6.25, 0.0, 100.0), LossModel::default(), 3);
        let d = schedule.schedule_chunk(10, 0);
        assert_eq!(d.penalty_ms, 18.75); // 1.5 * 2 * 6.25
    }

    #[test]
    fn releases_never_reorder() {
        let mut schedule =
            ReleaseSchedule::new(Scenario::optimal(), LossModel::default(), 11);
        let mut prev = 0;
        let mut now = 0u64;
        for i in 0..1000 {
            // arrivals bunch up and spread out
            now += (i % 7) * 100_000;
            let d = schedule.schedule_chunk(1 + (i as usize % 3000), now);
            assert!(d.release_ns >= prev, "chunk {i} released earlier than its predecessor");
            prev = d.release_ns;
        }
    }

    #[test]
    fn loss_frequency_matches_the_configured_rate() {
        let scenario = Scenario::worst(); // 0.1% per segment
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lost = 0u32;
        const DRAWS: u32 = 100_000;
        for _ in 0..DRAWS {
            lost += draw_loss(1460, scenario.loss_pct, 1460, &mut rng).1;
        }
        let freq = f64::from(lost) / f64::from(DRAWS);
        assert!((0.0007..=0.0013).contains(&freq), "loss frequency {freq}");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn release_is_fifo_and_at_least_now(
                seed in any::<u64>(),
                steps in proptest::collection::vec((1usize..20_000, 0u64..5_000_000), 1..50),
            ) {
                let mut schedule = ReleaseSchedule::new(
                    Scenario::worst(),
                    LossModel::default(),
                    seed,
                );
                let mut now = 0u64;
                let mut prev = 0u64;
                for (len, advance) in steps {
                    now += advance;
                    let d = schedule.schedule_chunk(len, now);
                    prop_assert!(d.release_ns >= now);
                    prop_assert!(d.release_ns >= prev);
                    prop_assert!(d.delay_ms >= 0.0);
                    prop_assert_eq!(d.segments, len.div_ceil(1460) as u32);
                    prop_assert!(d.lost_segments <= d.segments);
                    prop_assert_eq!(d.penalty_ms > 0.0, d.lost_segments > 0);
                    prev = d.release_ns;
                }
            }
        }
    }
}
