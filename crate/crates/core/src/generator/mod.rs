//! Desk-scale style-based generator.
//!
//! A mapping MLP turns `z` into a style vector `w`. The synthesis network
//! starts from a learned 4x4 constant and walks the resolution ladder; each
//! band upsamples (except band 4), runs one or two modulated 3x3 convs, and
//! adds its ToRGB output onto the upsampled image of the band below.

mod fixtures;

pub use self::fixtures::{init_random, synth_transfer};

use serde::Serialize;

use crate::checkpoint::{Checkpoint, GeneratorConfig};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::tensor::kernels::{upsample2x_planes, Epilogue};
use crate::tensor::{leaky_relu_inplace, Image, ModulatedConv, Tensor, DEMOD_EPSILON, LRELU_GAIN, LRELU_SLOPE};

const PIXEL_NORM_EPSILON: f32 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

fn spec(name: String, shape: Vec<usize>) -> ParamSpec {
    ParamSpec { name, shape }
}

fn conv_layer(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, style_dim: usize) {
    out.push(spec(format!("{prefix}.weight"), vec![c_out, c_in, 3, 3]));
    out.push(spec(format!("{prefix}.bias"), vec![c_out]));
    out.push(spec(format!("{prefix}.affine_weight"), vec![c_in, style_dim]));
    out.push(spec(format!("{prefix}.affine_bias"), vec![c_in]));
    out.push(spec(format!("{prefix}.noise_strength"), vec![1]));
}

/// Every parameter `config` prescribes, mapping layers first, then bands in
/// ascending resolution.
pub fn manifest(config: &GeneratorConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for i in 0..config.mapping_layers {
        let fan_in = if i == 0 { config.latent_dim } else { config.style_dim };
        out.push(spec(format!("mapping.fc{i}.weight"), vec![config.style_dim, fan_in]));
        out.push(spec(format!("mapping.fc{i}.bias"), vec![config.style_dim]));
    }
    let mut prev = None;
    for (&r, &c) in &config.channels_per_band {
        let block = format!("synthesis.b{r}");
        match prev {
            None => out.push(spec(format!("{block}.const"), vec![c, 4, 4])),
            Some(c_prev) => conv_layer(&mut out, &format!("{block}.conv0"), c_prev, c, config.style_dim),
        }
        conv_layer(&mut out, &format!("{block}.conv1"), c, c, config.style_dim);
        out.push(spec(format!("{block}.torgb.weight"), vec![3, c, 1, 1]));
        out.push(spec(format!("{block}.torgb.bias"), vec![3]));
        out.push(spec(format!("{block}.torgb.affine_weight"), vec![c, config.style_dim]));
        out.push(spec(format!("{block}.torgb.affine_bias"), vec![c]));
        prev = Some(c);
    }
    out
}

/// Seed of the per-layer noise planes. Each plane is drawn from the stream
/// keyed by the seed and the name of the layer's `noise_strength` parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct NoiseSpec {
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(seed: u64) -> Self {
        NoiseSpec { seed }
    }
}

/// `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone)]
struct Dense {
    weight: Vec<f32>,
    bias: Vec<f32>,
    n_in: usize,
}

impl Dense {
    fn from_ckpt(ckpt: &Checkpoint, prefix: &str, weight: &str, bias: &str) -> Result<Self> {
        let w = ckpt.tensor(&format!("{prefix}.{weight}"))?;
        Ok(Dense {
            weight: w.data().to_vec(),
            bias: ckpt.tensor(&format!("{prefix}.{bias}"))?.data().to_vec(),
            n_in: w.dims()[1],
        })
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.n_in);
        self.weight
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, &b)| dot(row, x) + b)
            .collect()
    }
}

/// Dot product with eight interleaved partial sums (vectorizes; fixed
/// summation order).
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (a8, a_tail) = a.split_at(a.len() / 8 * 8);
    let (b8, b_tail) = b.split_at(a8.len());
    for (ca, cb) in a8.chunks_exact(8).zip(b8.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in a_tail.iter().zip(b_tail) {
        sum += x * y;
    }
    sum
}

#[derive(Debug, Clone)]
struct StyledConv {
    conv: ModulatedConv,
    affine: Dense,
    bias: Vec<f32>,
    noise_strength: f32,
}

impl StyledConv {
    fn from_ckpt(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Ok(StyledConv {
            conv: ModulatedConv::new(ckpt.tensor(&format!("{prefix}.weight"))?)?,
            affine: Dense::from_ckpt(ckpt, prefix, "affine_weight", "affine_bias")?,
            bias: ckpt.tensor(&format!("{prefix}.bias"))?.data().to_vec(),
            noise_strength: ckpt.tensor(&format!("{prefix}.noise_strength"))?.data()[0],
        })
    }

    /// `x` is `[c_in, r, r]`, or `[c_in, r/2, r/2]` when `upsample` is set.
    fn forward(&self, x: &[f32], r: usize, upsample: bool, w: &[f32], noise: &[f32]) -> Result<Vec<f32>> {
        let style = self.affine.apply(w);
        let epilogue = Epilogue {
            bias: &self.bias,
            noise: Some((noise, self.noise_strength)),
            activate: true,
        };
        if upsample {
            self.conv.apply_upsampled_then(x, r / 2, r / 2, &style, Some(DEMOD_EPSILON), &epilogue)
        } else {
            self.conv.apply_then(x, r, r, &style, Some(DEMOD_EPSILON), &epilogue)
        }
    }
}

#[derive(Debug, Clone)]
struct ToRgb {
    conv: ModulatedConv,
    affine: Dense,
    bias: Vec<f32>,
}

impl ToRgb {
    fn from_ckpt(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Ok(ToRgb {
            conv: ModulatedConv::new(ckpt.tensor(&format!("{prefix}.weight"))?)?,
            affine: Dense::from_ckpt(ckpt, prefix, "affine_weight", "affine_bias")?,
            bias: ckpt.tensor(&format!("{prefix}.bias"))?.data().to_vec(),
        })
    }

    fn forward(&self, x: &[f32], r: usize, w: &[f32]) -> Result<Vec<f32>> {
        let style = self.affine.apply(w);
        let epilogue = Epilogue {
            bias: &self.bias,
            noise: None,
            activate: false,
        };
        self.conv.apply_then(x, r, r, &style, None, &epilogue)
    }
}

#[derive(Debug, Clone)]
struct Block {
    r: u32,
    conv0: Option<StyledConv>,
    conv1: StyledConv,
    torgb: ToRgb,
}

/// Per-layer noise planes for one seed, in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    seed: u64,
    /// `(conv0, conv1)` planes of `r * r` values per band.
    planes: Vec<(Option<Vec<f32>>, Vec<f32>)>,
}

impl NoiseBank {
    pub fn new(config: &GeneratorConfig, spec: NoiseSpec) -> Self {
        let plane = |r: u32, layer: &str| {
            let name = format!("synthesis.b{r}.{layer}.noise_strength");
            rng::normal_vec(domain::NOISE, spec.seed, &name, (r * r) as usize)
        };
        let planes = config
            .bands()
            .into_iter()
            .map(|r| ((r > 4).then(|| plane(r, "conv0")), plane(r, "conv1")))
            .collect();
        NoiseBank { seed: spec.seed, planes }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// A checkpoint unpacked for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    mapping: Vec<Dense>,
    constant: Vec<f32>,
    blocks: Vec<Block>,
}

/// Output of a synthesis pass stopped after band `r`.
struct Trace {
    features: Vec<f32>,
    channels: usize,
    r: usize,
    rgb: Vec<f32>,
}

impl Generator {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let config = ckpt.meta().clone();
        let mapping = (0..config.mapping_layers)
            .map(|i| Dense::from_ckpt(ckpt, &format!("mapping.fc{i}"), "weight", "bias"))
            .collect::<Result<_>>()?;
        let bands = config.bands();
        let constant = ckpt.tensor(&format!("synthesis.b{}.const", bands[0]))?.data().to_vec();
        let blocks = bands
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let prefix = format!("synthesis.b{r}");
                Ok(Block {
                    r,
                    conv0: if k == 0 {
                        None
                    } else {
                        Some(StyledConv::from_ckpt(ckpt, &format!("{prefix}.conv0"))?)
                    },
                    conv1: StyledConv::from_ckpt(ckpt, &format!("{prefix}.conv1"))?,
                    torgb: ToRgb::from_ckpt(ckpt, &format!("{prefix}.torgb"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Generator {
            config,
            mapping,
            constant,
            blocks,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn noise(&self, spec: NoiseSpec) -> NoiseBank {
        NoiseBank::new(&self.config, spec)
    }

    /// `z -> w`: pixel-normalize `z`, then the leaky-ReLU MLP.
    pub fn mapping(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "z has {} entries, config expects {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        check_finite(z, "z")?;
        let mean_sq = z.iter().map(|v| v * v).sum::<f32>() / z.len() as f32;
        let norm = (mean_sq + PIXEL_NORM_EPSILON).sqrt().recip();
        let mut x: Vec<f32> = z.iter().map(|v| v * norm).collect();
        for layer in &self.mapping {
            x = layer.apply(&x);
            leaky_relu_inplace(&mut x, LRELU_SLOPE, LRELU_GAIN);
        }
        check_finite(&x, "mapping output")?;
        Ok(x)
    }

    fn check_w(&self, w: &[f32]) -> Result<()> {
        if w.len() != self.config.style_dim {
            return Err(Error::Shape(format!(
                "w has {} entries, config expects {}",
                w.len(),
                self.config.style_dim
            )));
        }
        check_finite(w, "w")
    }

    fn check_noise(&self, noise: &NoiseBank) -> Result<()> {
        if noise.planes.len() != self.blocks.len()
            || noise.planes.iter().zip(&self.blocks).any(|(p, b)| p.1.len() != (b.r * b.r) as usize)
        {
            return Err(Error::ConfigMismatch("noise bank was built for another config".into()));
        }
        Ok(())
    }

    fn run(&self, w: &[f32], noise: &NoiseBank, stop_at: u32) -> Result<Trace> {
        self.check_w(w)?;
        self.check_noise(noise)?;
        let mut x = self.constant.clone();
        let mut rgb: Vec<f32> = Vec::new();
        let mut prev_r = 0usize;
        let mut channels = self.constant.len() / 16;
        for (block, (n0, n1)) in self.blocks.iter().zip(&noise.planes) {
            let r = block.r as usize;
            if let (Some(conv0), Some(n0)) = (&block.conv0, n0) {
                x = conv0.forward(&x, r, true, w, n0)?;
            }
            x = block.conv1.forward(&x, r, false, w, n1)?;
            channels = block.conv1.conv.c_out();
            let mut y = block.torgb.forward(&x, r, w)?;
            if !rgb.is_empty() {
                let up = upsample2x_planes(&rgb, 3, prev_r, prev_r);
                y.iter_mut().zip(&up).for_each(|(a, b)| *a += b);
            }
            rgb = y;
            prev_r = r;
            if block.r == stop_at {
                break;
            }
        }
        Ok(Trace {
            features: x,
            channels,
            r: prev_r,
            rgb,
        })
    }

    /// Render an image from a style vector, bypassing the mapping network.
    pub fn synthesize(&self, w: &[f32], noise: &NoiseBank) -> Result<Image> {
        let trace = self.run(w, noise, self.config.max_resolution)?;
        check_finite(&trace.rgb, "generated image")?;
        Image::new(trace.r, trace.rgb)
    }

    /// Features leaving band `tap_r` (after the conv1 activation).
    pub fn synthesize_tap(&self, w: &[f32], noise: &NoiseBank, tap_r: u32) -> Result<Tensor> {
        if !self.config.is_band(tap_r) {
            return Err(Error::InvalidBand(tap_r));
        }
        let trace = self.run(w, noise, tap_r)?;
        check_finite(&trace.features, "activations")?;
        Tensor::new(vec![trace.channels, trace.r, trace.r], trace.features)
    }

    pub fn forward(&self, z: &[f32], noise: &NoiseBank) -> Result<Image> {
        self.synthesize(&self.mapping(z)?, noise)
    }
}

fn check_finite(v: &[f32], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_owned()))
    }
}

pub fn forward(ckpt: &Checkpoint, z: &[f32], noise: NoiseSpec) -> Result<Image> {
    let g = Generator::new(ckpt)?;
    g.forward(z, &g.noise(noise))
}

/// [`forward`] with the style vector supplied directly.
pub fn forward_w(ckpt: &Checkpoint, w: &[f32], noise: NoiseSpec) -> Result<Image> {
    let g = Generator::new(ckpt)?;
    g.synthesize(w, &g.noise(noise))
}

pub fn activations(ckpt: &Checkpoint, z: &[f32], noise: NoiseSpec, tap_r: u32) -> Result<Tensor> {
    let g = Generator::new(ckpt)?;
    let w = g.mapping(z)?;
    g.synthesize_tap(&w, &g.noise(noise), tap_r)
}
