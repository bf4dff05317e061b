use super::simd::{FlatConv, BLOCK, LANES};
use super::Tensor;
use crate::error::{Error, Result};

pub const LRELU_SLOPE: f32 = 0.2;
pub const LRELU_GAIN: f32 = std::f32::consts::SQRT_2;
pub const DEMOD_EPSILON: f32 = 1e-8;

/// A convolution weight `[c_out, c_in, k, k]` prepared for repeated
/// style-modulated application.
///
/// The modulated-and-demodulated weight of output channel `j` is
/// `w''[j,i] = s[i] * w[j,i] / sqrt(Σ_{i,ky,kx} (s[i] * w[j,i,ky,kx])² + eps)`.
/// It is never materialized: the input is scaled by the style, correlated
/// with the raw weight, and each output channel is divided by its
/// demodulation divisor.
#[derive(Debug, Clone)]
pub struct ModulatedConv {
    c_in: usize,
    c_out: usize,
    k: usize,
    packed: Vec<f32>,
    /// 3x3 only: the four 2x2 polyphase kernels of "nearest-upsample, then
    /// convolve", indexed by output phase `2 * (y % 2) + (x % 2)`.
    phases: Option<[Vec<f32>; 4]>,
    /// `Σ_{ky,kx} w[j,i,ky,kx]²`, indexed `[j * c_in + i]`.
    sq_norms: Vec<f64>,
}

/// Low-resolution tap (0 or 1) that 3x3 tap `k` reads for output phase
/// `a` after nearest upsampling.
const PHASE_TAP: [[usize; 3]; 2] = [[0, 1, 1], [0, 0, 1]];

fn pack(c_out: usize, c_in: usize, taps: usize, w: impl Fn(usize, usize, usize) -> f32) -> Vec<f32> {
    let blocks = c_out.div_ceil(BLOCK);
    let mut packed = vec![0.0; blocks * c_in * taps * BLOCK];
    for j in 0..c_out {
        let (jb, c) = (j / BLOCK, j % BLOCK);
        for i in 0..c_in {
            for t in 0..taps {
                packed[((jb * c_in + i) * taps + t) * BLOCK + c] = w(j, i, t);
            }
        }
    }
    packed
}

thread_local! {
    static SCRATCH: std::cell::RefCell<(Vec<f32>, Vec<f32>)> = const { std::cell::RefCell::new((Vec::new(), Vec::new())) };
}

impl ModulatedConv {
    pub fn new(weight: &Tensor) -> Result<Self> {
        weight.expect_rank(4, "conv weight")?;
        let (c_out, c_in, kh, kw) = (
            weight.dims()[0],
            weight.dims()[1],
            weight.dims()[2],
            weight.dims()[3],
        );
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv kernel must be square with odd size, got {kh}x{kw}"
            )));
        }
        let k = kh;
        let taps = k * k;
        let w = weight.data();
        let packed = pack(c_out, c_in, taps, |j, i, t| w[(j * c_in + i) * taps + t]);
        let phases = (k == 3).then(|| {
            std::array::from_fn(|phase| {
                let (a, b) = (phase / 2, phase % 2);
                pack(c_out, c_in, 4, |j, i, t| {
                    let (ty, tx) = (t / 2, t % 2);
                    let mut sum = 0.0f32;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            if PHASE_TAP[a][ky] == ty && PHASE_TAP[b][kx] == tx {
                                sum += w[((j * c_in + i) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    sum
                })
            })
        });
        let sq_norms = (0..c_out * c_in)
            .map(|ji| {
                w[ji * taps..(ji + 1) * taps]
                    .iter()
                    .map(|&x| (x as f64) * (x as f64))
                    .sum()
            })
            .collect();

        Ok(ModulatedConv {
            c_in,
            c_out,
            k,
            packed,
            phases,
            sq_norms,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    /// `sqrt(Σ_{i,ky,kx} (s[i] * w[j,i,ky,kx])² + eps)` per output channel.
    pub fn demod_divisors(&self, style: &[f32], epsilon: f32) -> Vec<f32> {
        (0..self.c_out)
            .map(|j| {
                let row = &self.sq_norms[j * self.c_in..(j + 1) * self.c_in];
                let sum: f64 = row
                    .iter()
                    .zip(style)
                    .map(|(&sq, &s)| (s as f64) * (s as f64) * sq)
                    .sum();
                (sum + epsilon as f64).sqrt() as f32
            })
            .collect()
    }

    fn check(&self, input: &[f32], h: usize, w: usize, style: &[f32], demod: Option<f32>) -> Result<()> {
        if style.len() != self.c_in {
            return Err(Error::Shape(format!(
                "style has {} entries, conv expects {} input channels",
                style.len(),
                self.c_in
            )));
        }
        if h == 0 || w == 0 || input.len() != self.c_in * h * w {
            return Err(Error::Shape(format!(
                "conv input of {} values does not match [{}, {h}, {w}]",
                input.len(),
                self.c_in
            )));
        }
        if let Some(eps) = demod {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!("demodulation epsilon {eps} must be >= 0")));
            }
        }
        Ok(())
    }

    fn output_scales(&self, style: &[f32], demod: Option<f32>) -> Vec<f32> {
        match demod {
            Some(eps) => self
                .demod_divisors(style, eps)
                .into_iter()
                .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
                .collect(),
            None => vec![1.0; self.c_out],
        }
    }

    /// Style-scaled copy of `input` into zero-padded planes of pitch
    /// `w + 2 * pad`, at least `min_len` long. Every element is written
    /// exactly once.
    fn modulate_padded(padded: &mut Vec<f32>, input: &[f32], h: usize, w: usize, style: &[f32], pad: usize, min_len: usize) {
        let pw = w + 2 * pad;
        padded.clear();
        for (i, &s) in style.iter().enumerate() {
            let src = &input[i * h * w..(i + 1) * h * w];
            padded.resize(padded.len() + pad * pw + pad, 0.0);
            for (y, row) in src.chunks_exact(w).enumerate() {
                if y > 0 {
                    padded.resize(padded.len() + 2 * pad, 0.0);
                }
                padded.extend(row.iter().map(|&x| s * x));
            }
            padded.resize(padded.len() + pad * pw + pad, 0.0);
        }
        if padded.len() < min_len {
            padded.resize(min_len, 0.0);
        }
    }

    /// Apply to `input` planes `[c_in, h, w]`, returning `[c_out, h, w]`.
    /// `demod = Some(eps)` demodulates; `None` leaves the modulated
    /// weights unnormalized.
    pub fn apply(&self, input: &[f32], h: usize, w: usize, style: &[f32], demod: Option<f32>) -> Result<Vec<f32>> {
        self.apply_then(input, h, w, style, demod, &Epilogue::NONE)
    }

    pub(crate) fn apply_then(
        &self,
        input: &[f32],
        h: usize,
        w: usize,
        style: &[f32],
        demod: Option<f32>,
        epilogue: &Epilogue<'_>,
    ) -> Result<Vec<f32>> {
        self.check(input, h, w, style, demod)?;
        epilogue.check(self.c_out, h * w)?;
        let scales = self.output_scales(style, demod);
        let pad = self.k / 2;
        let pw = w + 2 * pad;
        let offsets: Vec<usize> = (0..self.k)
            .flat_map(|ky| (0..self.k).map(move |kx| ky * pw + kx))
            .collect();
        let conv = FlatConv {
            c_in: self.c_in,
            blocks: self.c_out.div_ceil(BLOCK),
            plane_stride: (h + 2 * pad) * pw,
            offsets: &offsets,
            n_out: (h * pw).div_ceil(LANES) * LANES,
        };
        let mut out = Vec::with_capacity(self.c_out * h * w);
        SCRATCH.with_borrow_mut(|(padded, raw)| {
            Self::modulate_padded(padded, input, h, w, style, pad, conv.required_input_len());
            // Fully overwritten by the kernel; stale contents are fine.
            raw.resize(conv.blocks * BLOCK * conv.n_out, 0.0);
            conv.run(padded, &self.packed, raw);
            for (j, &scale) in scales.iter().enumerate() {
                let src = &raw[j * conv.n_out..];
                for y in 0..h {
                    epilogue.emit(&mut out, j, scale, &src[y * pw..y * pw + w], y * w);
                }
            }
        });
        Ok(out)
    }

    /// `apply` on the nearest-neighbour 2x upsampling of `input`, without
    /// materializing it: returns `[c_out, 2h, 2w]`. 3x3 kernels only.
    ///
    /// Each output phase `(y % 2, x % 2)` is a 2x2 correlation over the
    /// low-resolution input whose taps are sums of the 3x3 taps landing on
    /// the same source pixel, so this costs 4/9 of the direct route.
    pub fn apply_upsampled(
        &self,
        input: &[f32],
        h: usize,
        w: usize,
        style: &[f32],
        demod: Option<f32>,
    ) -> Result<Vec<f32>> {
        self.apply_upsampled_then(input, h, w, style, demod, &Epilogue::NONE)
    }

    pub(crate) fn apply_upsampled_then(
        &self,
        input: &[f32],
        h: usize,
        w: usize,
        style: &[f32],
        demod: Option<f32>,
        epilogue: &Epilogue<'_>,
    ) -> Result<Vec<f32>> {
        self.check(input, h, w, style, demod)?;
        let phases = self
            .phases
            .as_ref()
            .ok_or_else(|| Error::Shape(format!("fused upsampling needs a 3x3 kernel, got {0}x{0}", self.k)))?;
        let (h2, w2) = (2 * h, 2 * w);
        epilogue.check(self.c_out, h2 * w2)?;
        let scales = self.output_scales(style, demod);
        let pw = w + 2;
        let stride = (h + 2) * pw;
        let n_out = (h * pw).div_ceil(LANES) * LANES;
        let blocks = self.c_out.div_ceil(BLOCK);
        let phase_len = blocks * BLOCK * n_out;
        let min_len = (self.c_in - 1) * stride + n_out + 2 * pw + 2;
        let mut out = Vec::with_capacity(self.c_out * h2 * w2);
        SCRATCH.with_borrow_mut(|(padded, raw)| {
            Self::modulate_padded(padded, input, h, w, style, 1, min_len);
            raw.resize(4 * phase_len, 0.0);
            for (phase, packed) in phases.iter().enumerate() {
                let (a, b) = (phase / 2, phase % 2);
                let offsets: Vec<usize> = (0..4).map(|t| (a + t / 2) * pw + b + t % 2).collect();
                let conv = FlatConv {
                    c_in: self.c_in,
                    blocks,
                    plane_stride: stride,
                    offsets: &offsets,
                    n_out,
                };
                conv.run(padded, packed, &mut raw[phase * phase_len..(phase + 1) * phase_len]);
            }
            let mut row = vec![0.0f32; w2];
            for (j, &scale) in scales.iter().enumerate() {
                for y in 0..h {
                    for a in 0..2 {
                        let at = |b: usize| (2 * a + b) * phase_len + j * n_out + y * pw;
                        let (even, odd) = (&raw[at(0)..at(0) + w], &raw[at(1)..at(1) + w]);
                        for (pair, (&e, &o)) in row.chunks_exact_mut(2).zip(even.iter().zip(odd)) {
                            pair[0] = e;
                            pair[1] = o;
                        }
                        epilogue.emit(&mut out, j, scale, &row, (2 * y + a) * w2);
                    }
                }
            }
        });
        Ok(out)
    }
}

/// Per-element work fused into the copy out of the kernel's scratch:
/// `v * scale[j] + (noise_strength * noise[p] + bias[j])`, then the scaled
/// leaky ReLU when `activate` is set.
pub(crate) struct Epilogue<'a> {
    /// Per output channel; empty for none.
    pub bias: &'a [f32],
    /// One plane shared by every channel, with its strength.
    pub noise: Option<(&'a [f32], f32)>,
    pub activate: bool,
}

impl Epilogue<'_> {
    pub const NONE: Epilogue<'static> = Epilogue {
        bias: &[],
        noise: None,
        activate: false,
    };

    fn check(&self, c_out: usize, plane: usize) -> Result<()> {
        if !self.bias.is_empty() && self.bias.len() != c_out {
            return Err(Error::Shape(format!("{} biases for {c_out} channels", self.bias.len())));
        }
        if let Some((n, _)) = self.noise {
            if n.len() != plane {
                return Err(Error::Shape(format!("noise plane of {} values, output plane is {plane}", n.len())));
            }
        }
        Ok(())
    }

    /// Append the finished values for raw outputs `src` of channel `j`,
    /// which start at position `p` of the output plane.
    #[inline]
    fn emit(&self, out: &mut Vec<f32>, j: usize, scale: f32, src: &[f32], p: usize) {
        let start = out.len();
        let bias = self.bias.get(j).copied();
        match (self.noise, bias) {
            (Some((plane, strength)), b) => {
                let b = b.unwrap_or(0.0);
                let noise = &plane[p..p + src.len()];
                out.extend(src.iter().zip(noise).map(|(&r, &n)| r * scale + (strength * n + b)));
            }
            (None, Some(b)) => out.extend(src.iter().map(|&r| r * scale + b)),
            (None, None) => out.extend(src.iter().map(|&r| r * scale)),
        }
        if self.activate {
            leaky_relu_inplace(&mut out[start..], LRELU_SLOPE, LRELU_GAIN);
        }
    }
}

fn conv_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize)> {
    input.expect_rank(3, "conv input")?;
    weight.expect_rank(4, "conv weight")?;
    if input.dims()[0] != weight.dims()[1] {
        return Err(Error::Shape(format!(
            "input has {} channels, weight expects {}",
            input.dims()[0],
            weight.dims()[1]
        )));
    }
    Ok((input.dims()[1], input.dims()[2]))
}

fn finite_output(dims: Vec<usize>, data: Vec<f32>, what: &str) -> Result<Tensor> {
    if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what} produced {bad}")));
    }
    Tensor::new(dims, data)
}

/// Style-modulated, demodulated same-padded cross-correlation.
/// `input` is `[C_in, H, W]`, `weight` is `[C_out, C_in, k, k]` with `k` odd.
pub fn conv2d_modulated(input: &Tensor, weight: &Tensor, style: &[f32], epsilon: f32) -> Result<Tensor> {
    let (h, w) = conv_dims(input, weight)?;
    let conv = ModulatedConv::new(weight)?;
    let out = conv.apply(input.data(), h, w, style, Some(epsilon))?;
    finite_output(vec![conv.c_out(), h, w], out, "conv2d_modulated")
}

/// Modulation without demodulation (used by the ToRGB layers).
pub fn conv2d_modulated_nodemod(input: &Tensor, weight: &Tensor, style: &[f32]) -> Result<Tensor> {
    let (h, w) = conv_dims(input, weight)?;
    let conv = ModulatedConv::new(weight)?;
    let out = conv.apply(input.data(), h, w, style, None)?;
    finite_output(vec![conv.c_out(), h, w], out, "conv2d_modulated_nodemod")
}

pub fn demodulation_divisors(weight: &Tensor, style: &[f32], epsilon: f32) -> Result<Vec<f32>> {
    let conv = ModulatedConv::new(weight)?;
    if style.len() != conv.c_in() {
        return Err(Error::Shape(format!(
            "style has {} entries, weight expects {}",
            style.len(),
            conv.c_in()
        )));
    }
    Ok(conv.demod_divisors(style, epsilon))
}

/// Nearest-neighbour 2x upsampling of `[C, H, W]` planes.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    input.expect_rank(3, "upsample2x")?;
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    Tensor::new(vec![c, 2 * h, 2 * w], upsample2x_planes(input.data(), c, h, w))
}

pub(crate) fn upsample2x_planes(data: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h {
            let src = &data[(ch * h + y) * w..(ch * h + y + 1) * w];
            let row0 = (ch * h2 + 2 * y) * w2;
            for (x, &v) in src.iter().enumerate() {
                out[row0 + 2 * x] = v;
                out[row0 + 2 * x + 1] = v;
            }
            out.copy_within(row0..row0 + w2, row0 + w2);
        }
    }
    out
}

/// 2x2 mean pooling of `[C, H, W]` planes; `H` and `W` must be even.
pub fn downsample2x(input: &Tensor) -> Result<Tensor> {
    input.expect_rank(3, "downsample2x")?;
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("downsample2x needs even sides, got {h}x{w}")));
    }
    let d = input.data();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let at = |yy: usize, xx: usize| d[(ch * h + yy) * w + xx];
                let s = at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1);
                out.push(s * 0.25);
            }
        }
    }
    Tensor::new(vec![c, h2, w2], out)
}

/// `gain * x` for `x >= 0`, `gain * slope * x` otherwise.
pub fn leaky_relu(input: &Tensor, slope: f32, gain: f32) -> Tensor {
    debug_assert!(slope > 0.0 && slope < 1.0);
    input.map(|x| if x >= 0.0 { gain * x } else { gain * slope * x })
}

pub fn leaky_relu_inplace(data: &mut [f32], slope: f32, gain: f32) {
    for x in data {
        *x = if *x >= 0.0 { gain * *x } else { gain * slope * *x };
    }
}
