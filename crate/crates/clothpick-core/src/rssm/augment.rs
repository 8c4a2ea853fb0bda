//! Batch-wise data augmentation: quarter-turn rotations and vertical flips
//! applied consistently to observation grids and action coordinates, plus
//! Gaussian observation noise on heightfield channels only.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{Channel, PickPlaceAction};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// One training sequence in grid form (before flattening into model vectors).
#[derive(Debug, Clone)]
pub struct GridSeq {
    pub resolution: usize,
    pub channels: Vec<Channel>,
    /// L × channels × resolution² observation frames.
    pub frames: Vec<Vec<Vec<f64>>>,
    /// L actions; index 0 holds the episode-start zero action.
    pub actions: Vec<PickPlaceAction>,
    /// L rewards; index 0 is zero by convention.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub vflip: bool,
    pub obs_noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotate: true,
            vflip: true,
            obs_noise_std: 0.02,
        }
    }
}

/// Rotate a row-major square grid by k·90° counter-clockwise, matching the
/// workspace convention (row 0 at y = -1): (x, y) ↦ (-y, x) sends
/// cell (r, c) to (r' = c, c' = N-1-r).
pub fn rot90_grid(grid: &[f64], resolution: usize, k: u8) -> Vec<f64> {
    let n = resolution;
    let mut current = grid.to_vec();
    for _ in 0..(k % 4) {
        let mut next = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                next[c * n + (n - 1 - r)] = current[r * n + c];
            }
        }
        current = next;
    }
    current
}

/// Mirror a row-major square grid across the x axis (rows reversed).
pub fn vflip_grid(grid: &[f64], resolution: usize) -> Vec<f64> {
    let n = resolution;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        out[(n - 1 - r) * n..(n - r) * n].copy_from_slice(&grid[r * n..(r + 1) * n]);
    }
    out
}

fn validate(seq: &GridSeq) -> Result<()> {
    let cells = seq.resolution * seq.resolution;
    for frame in &seq.frames {
        if frame.len() != seq.channels.len() || frame.iter().any(|g| g.len() != cells) {
            return Err(Error::Contract(
                "augmentation needs square per-channel grids".into(),
            ));
        }
    }
    Ok(())
}

/// Augment every sequence in place. Each sequence draws one rotation k and
/// one flip decision applied to all its frames and actions; heightfield
/// channels then receive fresh Gaussian noise per cell. Rewards unchanged.
pub fn augment_batch(batch: &mut [GridSeq], cfg: &AugmentConfig, seed: u64) -> Result<()> {
    for (i, seq) in batch.iter_mut().enumerate() {
        validate(seq)?;
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let k = if cfg.rotate { rng.gen_range(0..4u8) } else { 0 };
        let flip = cfg.vflip && rng.gen_bool(0.5);

        if k != 0 || flip {
            for frame in &mut seq.frames {
                for grid in frame.iter_mut() {
                    if k != 0 {
                        *grid = rot90_grid(grid, seq.resolution, k);
                    }
                    if flip {
                        *grid = vflip_grid(grid, seq.resolution);
                    }
                }
            }
            for action in &mut seq.actions {
                if k != 0 {
                    *action = action.rotated90(k);
                }
                if flip {
                    *action = action.flipped_y();
                }
            }
        }

        if cfg.obs_noise_std > 0.0 {
            for frame in &mut seq.frames {
                for (ch, grid) in seq.channels.iter().zip(frame.iter_mut()) {
                    if *ch == Channel::Heightfield {
                        for v in grid.iter_mut() {
                            let n: f64 = rng.sample(StandardNormal);
                            *v += cfg.obs_noise_std * n;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
