use std::f64::consts::PI;

use beamtrain::channel::{assemble_sized, NoiseModel, NoiseStream};
use beamtrain::codebook::{best_beam_oracle, narrow_codebook, wide_codebook};
use beamtrain::eval::metrics::{gain_normalized, overhead_factor};
use beamtrain::predictors::dataset::split_indices;
use beamtrain::protocols::{exhaustive_search, refine_topk, Sounder};
use beamtrain::scenario::EpisodeState;
use beamtrain::{ClusterSpec, SystemConfig};
use proptest::prelude::*;

fn channel(seed: u64, steps: usize) -> beamtrain::ChannelMatrix64 {
    let system = SystemConfig::default();
    let mut state = EpisodeState::new(&system, &ClusterSpec::default(), seed);
    for _ in 0..steps {
        state = state.advance(system.training_period_s);
    }
    assemble_sized(&state.snapshot_paths(), system.tx_antennas, 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_refinement_finds_the_oracle(seed in any::<u64>(), steps in 0usize..10) {
        let h = channel(seed, steps);
        let narrow = narrow_codebook::<f64>(64, 64, PI);
        let sounder = Sounder::new(1.0, NoiseModel::disabled(), NoiseStream::new(seed), 0);
        let probs = vec![1.0 / 64.0; 64];
        let oracle = best_beam_oracle(&h, &narrow);
        prop_assert_eq!(refine_topk(&h, &narrow, &probs, 64, &sounder).tx, oracle);
        prop_assert_eq!(exhaustive_search(&h, &narrow, &sounder).tx, oracle);
    }

    #[test]
    fn normalized_gain_is_a_fraction(seed in any::<u64>(), m in 0usize..64) {
        let h = channel(seed, 0);
        let narrow = narrow_codebook::<f64>(64, 64, PI);
        let best = best_beam_oracle(&h, &narrow);
        let g = gain_normalized(&h, narrow.beam(m), narrow.beam(best));
        prop_assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn wide_blocks_partition_the_narrow_beams(ratio in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let wide = wide_codebook::<f64>(64, 64, ratio, PI);
        let covered: Vec<usize> = (0..wide.len()).flat_map(|w| wide.block(w)).collect();
        prop_assert_eq!(covered, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_a_partition(n in 2usize..400, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, val) = split_indices(n, frac, seed);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn overhead_never_negative(tau in 1e-4f64..1.0, budget in 0usize..100_000) {
        let f = overhead_factor(tau, budget, 1e-4, 1.0);
        prop_assert!((0.0..=1.0).contains(&f));
    }
}
