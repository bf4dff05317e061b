//! Inner loop of every convolution: a "flat plane" correlation.
//!
//! Input channels are stored as zero-padded planes of row pitch `pw`. An
//! output position `q = y * pw + x` accumulates `input[i][q + offset_t]` for
//! every input channel `i` and tap `t`, so a whole plane is one contiguous
//! run and the kernel needs no border handling. Columns `x >= W` of the
//! result are garbage and dropped by the caller.
//!
//! Weights are packed `[block][c_in][tap][BLOCK]` so that the `BLOCK`
//! output channels sharing one input load sit next to each other.
//!
//! Every variant accumulates each output lane in the same order (input
//! channel, then tap) with fused multiply-add, so all dispatch targets
//! produce bit-identical results.

use std::sync::OnceLock;

pub(crate) const BLOCK: usize = 8;
pub(crate) const LANES: usize = 16;

pub(crate) struct FlatConv<'a> {
    pub c_in: usize,
    pub blocks: usize,
    pub plane_stride: usize,
    pub offsets: &'a [usize],
    /// Output positions per channel, a multiple of [`LANES`].
    pub n_out: usize,
}

impl FlatConv<'_> {
    pub fn required_input_len(&self) -> usize {
        let max_off = self.offsets.iter().copied().max().unwrap_or(0);
        (self.c_in - 1) * self.plane_stride + self.n_out + max_off
    }

    /// `out` is `[blocks * BLOCK][n_out]`.
    pub fn run(&self, input: &[f32], packed: &[f32], out: &mut [f32]) {
        assert_eq!(self.n_out % LANES, 0);
        assert!(self.c_in >= 1 && !self.offsets.is_empty());
        assert!(input.len() >= self.required_input_len());
        assert_eq!(packed.len(), self.blocks * self.c_in * self.offsets.len() * BLOCK);
        assert!(out.len() >= self.blocks * BLOCK * self.n_out);

        match kernel() {
            #[cfg(target_arch = "x86_64")]
            Kernel::Avx512 => unsafe { x86::run_avx512(self, input, packed, out) },
            #[cfg(target_arch = "x86_64")]
            Kernel::Avx2 => unsafe { x86::run_avx2(self, input, packed, out) },
            Kernel::Portable => run_portable(self, input, packed, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kernel {
    #[cfg(target_arch = "x86_64")]
    Avx512,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    Portable,
}

pub(crate) fn kernel() -> Kernel {
    static KERNEL: OnceLock<Kernel> = OnceLock::new();
    *KERNEL.get_or_init(detect)
}

fn detect() -> Kernel {
    #[cfg(target_arch = "x86_64")]
    {
        if std::env::var_os("GANBLEND_PORTABLE_KERNEL").is_none() {
            if is_x86_feature_detected!("avx512f") {
                return Kernel::Avx512;
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                return Kernel::Avx2;
            }
        }
    }
    Kernel::Portable
}

pub(crate) fn run_portable(conv: &FlatConv<'_>, input: &[f32], packed: &[f32], out: &mut [f32]) {
    let taps = conv.offsets.len();
    for jb in 0..conv.blocks {
        let wb = &packed[jb * conv.c_in * taps * BLOCK..(jb + 1) * conv.c_in * taps * BLOCK];
        for q in (0..conv.n_out).step_by(LANES) {
            let mut acc = [[0f32; LANES]; BLOCK];
            for i in 0..conv.c_in {
                let plane = &input[i * conv.plane_stride + q..];
                let wi = &wb[i * taps * BLOCK..(i + 1) * taps * BLOCK];
                for (t, &off) in conv.offsets.iter().enumerate() {
                    let v = &plane[off..off + LANES];
                    let ww = &wi[t * BLOCK..(t + 1) * BLOCK];
                    for c in 0..BLOCK {
                        for l in 0..LANES {
                            acc[c][l] = ww[c].mul_add(v[l], acc[c][l]);
                        }
                    }
                }
            }
            for (c, lanes) in acc.iter().enumerate() {
                let o = (jb * BLOCK + c) * conv.n_out + q;
                out[o..o + LANES].copy_from_slice(lanes);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::{FlatConv, BLOCK, LANES};
    use std::arch::x86_64::*;

    /// Safety: caller checked buffer lengths (see `FlatConv::run`) and
    /// that the CPU supports AVX-512F.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn run_avx512(conv: &FlatConv<'_>, input: &[f32], packed: &[f32], out: &mut [f32]) {
        let taps = conv.offsets.len();
        let ip = input.as_ptr();
        let op = out.as_mut_ptr();
        for jb in 0..conv.blocks {
            let wb = packed.as_ptr().add(jb * conv.c_in * taps * BLOCK);
            let mut q = 0;
            // Two lane groups at a time: each weight broadcast feeds two FMAs.
            while q + 2 * LANES <= conv.n_out {
                let mut lo = [_mm512_setzero_ps(); BLOCK];
                let mut hi = [_mm512_setzero_ps(); BLOCK];
                for i in 0..conv.c_in {
                    let plane = ip.add(i * conv.plane_stride + q);
                    let wi = wb.add(i * taps * BLOCK);
                    for (t, &off) in conv.offsets.iter().enumerate() {
                        let v0 = _mm512_loadu_ps(plane.add(off));
                        let v1 = _mm512_loadu_ps(plane.add(off + LANES));
                        let ww = wi.add(t * BLOCK);
                        for c in 0..BLOCK {
                            let b = _mm512_set1_ps(*ww.add(c));
                            lo[c] = _mm512_fmadd_ps(b, v0, lo[c]);
                            hi[c] = _mm512_fmadd_ps(b, v1, hi[c]);
                        }
                    }
                }
                for c in 0..BLOCK {
                    let o = op.add((jb * BLOCK + c) * conv.n_out + q);
                    _mm512_storeu_ps(o, lo[c]);
                    _mm512_storeu_ps(o.add(LANES), hi[c]);
                }
                q += 2 * LANES;
            }
            while q < conv.n_out {
                let mut acc = [_mm512_setzero_ps(); BLOCK];
                for i in 0..conv.c_in {
                    let plane = ip.add(i * conv.plane_stride + q);
                    let wi = wb.add(i * taps * BLOCK);
                    for (t, &off) in conv.offsets.iter().enumerate() {
                        let v = _mm512_loadu_ps(plane.add(off));
                        let ww = wi.add(t * BLOCK);
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a = _mm512_fmadd_ps(_mm512_set1_ps(*ww.add(c)), v, *a);
                        }
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    _mm512_storeu_ps(op.add((jb * BLOCK + c) * conv.n_out + q), *a);
                }
                q += LANES;
            }
        }
    }

    /// Safety: caller checked buffer lengths and AVX2 + FMA support.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn run_avx2(conv: &FlatConv<'_>, input: &[f32], packed: &[f32], out: &mut [f32]) {
        let taps = conv.offsets.len();
        let ip = input.as_ptr();
        let op = out.as_mut_ptr();
        for jb in 0..conv.blocks {
            let wb = packed.as_ptr().add(jb * conv.c_in * taps * BLOCK);
            let mut q = 0;
            while q < conv.n_out {
                let mut lo = [_mm256_setzero_ps(); BLOCK];
                let mut hi = [_mm256_setzero_ps(); BLOCK];
                for i in 0..conv.c_in {
                    let plane = ip.add(i * conv.plane_stride + q);
                    let wi = wb.add(i * taps * BLOCK);
                    for (t, &off) in conv.offsets.iter().enumerate() {
                        let v0 = _mm256_loadu_ps(plane.add(off));
                        let v1 = _mm256_loadu_ps(plane.add(off + 8));
                        let ww = wi.add(t * BLOCK);
                        for c in 0..BLOCK {
                            let b = _mm256_broadcast_ss(&*ww.add(c));
                            lo[c] = _mm256_fmadd_ps(b, v0, lo[c]);
                            hi[c] = _mm256_fmadd_ps(b, v1, hi[c]);
                        }
                    }
                }
                for c in 0..BLOCK {
                    let o = op.add((jb * BLOCK + c) * conv.n_out + q);
                    _mm256_storeu_ps(o, lo[c]);
                    _mm256_storeu_ps(o.add(8), hi[c]);
                }
                q += LANES;
            }
        }
    }
}
