//! Seeded synthetic inputs for tests, benchmarks and the book.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{FeatureMap, Image};

/// Multi-octave value noise in `[0, 1]`: bilinearly interpolated random
/// lattices with cell sizes `base_cell, base_cell/2, ...` down to 2 pixels.
pub fn value_noise(channels: usize, height: usize, width: usize, base_cell: usize, seed: u64) -> Image {
    Image::new(channels, height, width, noise(channels, height, width, base_cell, seed))
        .expect("finite by construction")
}

/// Zero-centred value noise in `[-0.5, 0.5]` with any number of channels.
pub fn noise_features(channels: usize, height: usize, width: usize, base_cell: usize, seed: u64) -> FeatureMap {
    let data = noise(channels, height, width, base_cell, seed).into_iter().map(|v| v - 0.5).collect();
    FeatureMap::new(channels, height, width, data).expect("finite by construction")
}

fn noise(channels: usize, height: usize, width: usize, base_cell: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; channels * height * width];
    let mut total = 0.0;
    let mut cell = base_cell.max(2);
    let mut amp = 1.0;
    loop {
        let gh = height / cell + 2;
        let gw = width / cell + 2;
        let lattice: Vec<f64> = (0..gh * gw * channels).map(|_| rng.random::<f64>()).collect();
        for r in 0..height {
            let fy = r as f64 / cell as f64;
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            for c in 0..width {
                let fx = c as f64 / cell as f64;
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                for k in 0..channels {
                    let at = |y: usize, x: usize| lattice[(y * gw + x) * channels + k];
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                    let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                    acc[(r * width + c) * channels + k] += amp * (top * (1.0 - ty) + bot * ty);
                }
            }
        }
        total += amp;
        if cell <= 2 {
            break;
        }
        cell /= 2;
        amp *= 0.6;
    }
    acc.into_iter().map(|v| v / total).collect()
}

/// Independent standard-uniform features in `[-1, 1)`.
pub fn random_features(channels: usize, height: usize, width: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * height * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::new(channels, height, width, data).expect("finite by construction")
}
