//! Uncurated sample grids.
//!
//! Sample `i` of a grid uses `z_i` drawn from the stream `(seed, i)` and
//! the noise planes of `seed`, so a grid is a pure function of the model
//! and the spec. Cells are `R x R` images framed by a 2 px black border,
//! laid out row-major:
//!
//! ```text
//! columns = min(spec.columns, count)
//! rows    = ceil(count / columns)
//! width   = columns * (R + 4)
//! height  = rows * (R + 4)
//! ```
//!
//! Unused trailing cells stay black. 24 samples in 6 columns at R = 64
//! give a 408 x 272 PNG.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, GeneratorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, NoiseSpec};
use crate::par::{self, ExecMode};
use crate::rng::{self, domain};
use crate::tensor::{Image, RgbRaster};

pub const CELL_BORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGridSpec {
    pub seed: u64,
    pub count: usize,
    pub columns: usize,
}

impl Default for SampleGridSpec {
    fn default() -> Self {
        SampleGridSpec {
            seed: 0,
            count: 24,
            columns: 6,
        }
    }
}

impl SampleGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.columns == 0 {
            return Err(Error::Config(format!(
                "grid needs count >= 1 and columns >= 1, got {} and {}",
                self.count, self.columns
            )));
        }
        Ok(())
    }

    /// `(columns, rows)` actually used.
    pub fn layout(&self) -> (usize, usize) {
        let cols = self.columns.min(self.count);
        (cols, self.count.div_ceil(cols))
    }

    /// `(width, height)` in pixels for images of side `resolution`.
    pub fn pixel_size(&self, resolution: usize) -> (usize, usize) {
        let (cols, rows) = self.layout();
        let cell = resolution + 2 * CELL_BORDER;
        (cols * cell, rows * cell)
    }
}

/// Latent of sample `index` under grid seed `seed`.
pub fn sample_latent(config: &GeneratorConfig, seed: u64, index: usize) -> Vec<f32> {
    rng::normal_vec(domain::SAMPLE, seed, &index.to_string(), config.latent_dim)
}

/// The `spec.count` images of a grid, in order.
pub fn sample_images(ckpt: &Checkpoint, spec: &SampleGridSpec, exec: ExecMode) -> Result<Vec<Image>> {
    spec.validate()?;
    let g = Generator::new(ckpt)?;
    let noise = g.noise(NoiseSpec::new(spec.seed));
    par::try_map_indexed(exec, spec.count, |i| {
        g.forward(&sample_latent(g.config(), spec.seed, i), &noise)
    })
}

pub fn render_grid(ckpt: &Checkpoint, spec: &SampleGridSpec, exec: ExecMode) -> Result<RgbRaster> {
    let images = sample_images(ckpt, spec, exec)?;
    let r = ckpt.meta().max_resolution as usize;
    let (width, height) = spec.pixel_size(r);
    let (cols, _) = spec.layout();
    let cell = r + 2 * CELL_BORDER;
    let mut grid = RgbRaster::black(width, height);
    for (i, img) in images.iter().enumerate() {
        let (row, col) = (i / cols, i % cols);
        grid.blit(&RgbRaster::from_image(img)?, col * cell + CELL_BORDER, row * cell + CELL_BORDER);
    }
    Ok(grid)
}

pub fn render_grid_png(ckpt: &Checkpoint, spec: &SampleGridSpec, exec: ExecMode) -> Result<Vec<u8>> {
    render_grid(ckpt, spec, exec)?.encode()
}
