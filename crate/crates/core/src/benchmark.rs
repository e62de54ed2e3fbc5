//! Seeded nine-feature regression benchmark with a planted relevant subset.
//!
//! The label depends on exactly five features (1-based 3, 6, 7, 8, 9), each
//! taking three levels. Feature 3 enters through `|2t - 1|`, which a
//! mean-comparison test cannot see; features 6-8 share a latent level, so they
//! look redundant pairwise while each still carries its own information. The
//! other four columns are a redundant noisy copy of feature 9, pure noise and
//! two noisy mixtures of relevant features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::matrix::Matrix;

/// Zero-based indices of the features the label depends on.
pub const PLANTED: [usize; 5] = [2, 5, 6, 7, 8];
pub const REDUNDANT: usize = 0;
pub const NOISE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub rows: usize,
    /// Standard deviation of the additive label noise.
    pub label_noise: f64,
    /// Weight of the folded feature relative to the four linear ones.
    pub fold_weight: f64,
    /// Probability that each of features 6-8 takes the shared latent level.
    pub tie_prob: f64,
    /// Standard deviation of the noise on the redundant copy.
    pub copy_noise: f64,
    /// Standard deviation of the noise on the two mixtures.
    pub mix_noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            rows: 4000,
            label_noise: 0.01,
            fold_weight: 0.5,
            tie_prob: 0.5,
            copy_noise: 0.3,
            mix_noise: 0.3,
        }
    }
}

/// Features `X` (rows x 9) and label `y` in `[0, 1]`.
pub fn planted_benchmark(config: &PlantedConfig, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label_noise = Normal::new(0.0, config.label_noise).expect("finite noise");
    let copy_noise = Normal::new(0.0, config.copy_noise).expect("finite noise");
    let mix_noise = Normal::new(0.0, config.mix_noise).expect("finite noise");
    let level = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(0..3u8)) / 2.0;
    let fold = |t: f64| (2.0 * t - 1.0).abs();

    let mut rows = Vec::with_capacity(config.rows);
    let mut y = Vec::with_capacity(config.rows);
    for _ in 0..config.rows {
        let [a, b, c, d, e]: [f64; 5] = std::array::from_fn(|_| level(&mut rng));
        let latent = level(&mut rng);
        let mut tie = |v: f64| if rng.random_bool(config.tie_prob) { latent } else { v };
        let (b, c, d) = (tie(b), tie(c), tie(d));
        let w = config.fold_weight;
        let signal = (w * fold(a) + b + c + d + e) / (4.0 + w);
        y.push((0.1 + 0.8 * signal + label_noise.sample(&mut rng)).clamp(0.0, 1.0));
        let redundant = e + copy_noise.sample(&mut rng);
        let noise: f64 = rng.random();
        let mix_cd = 0.5 * (c + d) + mix_noise.sample(&mut rng);
        let mix_be = 0.5 * (b + e) + mix_noise.sample(&mut rng);
        rows.push([redundant, noise, a, mix_cd, mix_be, b, c, d, e]);
    }
    (Matrix::from_rows(&rows), y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_range_and_determinism() {
        let cfg = PlantedConfig { rows: 300, ..PlantedConfig::default() };
        let (x, y) = planted_benchmark(&cfg, 4);
        assert_eq!((x.n_rows(), x.n_cols()), (300, 9));
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(planted_benchmark(&cfg, 4), (x, y));
    }

    #[test]
    fn planted_features_take_three_levels() {
        let (x, _) = planted_benchmark(&PlantedConfig { rows: 200, ..PlantedConfig::default() }, 1);
        for j in PLANTED {
            assert!(x.column(j).iter().all(|v| [0.0, 0.5, 1.0].contains(v)));
        }
    }
}
