//! Real-to-complex FFTs on cubic periodic grids (2D and 3D).
//!
//! Spectra are stored row-major with shape `[n, …, n, n/2 + 1]`: the last
//! axis is the half-spectrum produced by the real transform.

use std::sync::Arc;

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Lines gathered per batch on strided axes.
const BATCH: usize = 16;

#[derive(Clone)]
pub(crate) struct SpectralGrid {
    dim: usize,
    n: usize,
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

#[derive(Clone, Copy)]
struct SyncPtr(*mut Complex64);
unsafe impl Send for SyncPtr {}
unsafe impl Sync for SyncPtr {}

impl SpectralGrid {
    pub fn new(dim: usize, n: usize) -> Self {
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Self {
            dim,
            n,
            half: n / 2 + 1,
            r2c: rp.plan_fft_forward(n),
            c2r: rp.plan_fft_inverse(n),
            fwd: cp.plan_fft_forward(n),
            inv: cp.plan_fft_inverse(n),
        }
    }

    pub fn real_len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spec_len(&self) -> usize {
        self.n.pow(self.dim as u32 - 1) * self.half
    }

    /// Signed integer wavenumbers of spectral index `s`; Nyquist components
    /// are reported as zero so that every derived multiplier is even or odd
    /// in the wavevector, keeping inverse transforms real.
    pub fn wavenumber(&self, s: usize) -> [f64; 3] {
        let mut k = [0.0; 3];
        let mut rest = s;
        let last = rest % self.half;
        rest /= self.half;
        k[self.dim - 1] = if 2 * last == self.n { 0.0 } else { last as f64 };
        for a in (0..self.dim - 1).rev() {
            let i = rest % self.n;
            rest /= self.n;
            k[a] = if 2 * i == self.n {
                0.0
            } else if 2 * i < self.n {
                i as f64
            } else {
                i as f64 - self.n as f64
            };
        }
        k
    }

    /// Unnormalized forward transform.
    #[cfg(test)]
    pub fn forward(&self, input: &[f64], out: &mut [Complex64]) {
        self.forward_component(input, 1, 0, out);
    }

    /// Forward transform of component `comp` of an interleaved field with
    /// `ncomp` values per grid point.
    pub fn forward_component(&self, input: &[f64], ncomp: usize, comp: usize, out: &mut [Complex64]) {
        debug_assert_eq!(input.len(), self.real_len() * ncomp);
        debug_assert_eq!(out.len(), self.spec_len());
        let n = self.n;
        out.par_chunks_mut(self.half)
            .zip(input.par_chunks(n * ncomp))
            .for_each_init(
                || (vec![0.0; n], self.r2c.make_scratch_vec()),
                |(line, scratch), (o, i)| {
                    for (k, x) in line.iter_mut().enumerate() {
                        *x = i[k * ncomp + comp];
                    }
                    self.r2c
                        .process_with_scratch(line, o, scratch)
                        .expect("real FFT buffer sizes are fixed by construction");
                },
            );
        for axis in (0..self.dim - 1).rev() {
            self.strided_pass(out, axis, &self.fwd);
        }
    }

    /// Normalized inverse transform; `spec` is used as scratch.
    #[cfg(test)]
    pub fn inverse(&self, spec: &mut [Complex64], out: &mut [f64]) {
        self.inverse_component(spec, out, 1, 0);
    }

    /// Normalized inverse transform written into component `comp` of an
    /// interleaved field; `spec` is used as scratch.
    pub fn inverse_component(&self, spec: &mut [Complex64], out: &mut [f64], ncomp: usize, comp: usize) {
        debug_assert_eq!(spec.len(), self.spec_len());
        debug_assert_eq!(out.len(), self.real_len() * ncomp);
        for axis in 0..self.dim - 1 {
            self.strided_pass(spec, axis, &self.inv);
        }
        let n = self.n;
        let scale = 1.0 / self.real_len() as f64;
        spec.par_chunks_mut(self.half)
            .zip(out.par_chunks_mut(n * ncomp))
            .for_each_init(
                || (vec![0.0; n], self.c2r.make_scratch_vec()),
                |(line, scratch), (s, o)| {
                    s[0].im = 0.0;
                    if n % 2 == 0 {
                        s[n / 2].im = 0.0;
                    }
                    self.c2r
                        .process_with_scratch(s, line, scratch)
                        .expect("real FFT buffer sizes are fixed by construction");
                    for (k, x) in line.iter().enumerate() {
                        o[k * ncomp + comp] = x * scale;
                    }
                },
            );
    }

    /// Complex FFT along a non-last axis.
    fn strided_pass(&self, data: &mut [Complex64], axis: usize, plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        // stride between consecutive entries along `axis`
        let stride = self.n.pow((self.dim - 2 - axis) as u32) * self.half;
        let block = n * stride;
        let outer = data.len() / block;
        let batches_per_block = stride.div_ceil(BATCH);
        let ptr = SyncPtr(data.as_mut_ptr());
        (0..outer * batches_per_block).into_par_iter().for_each_init(
            || (vec![Complex64::default(); BATCH * n], vec![Complex64::default(); plan.get_inplace_scratch_len()]),
            |(buf, scratch), task| {
                let ptr = ptr;
                let o = task / batches_per_block;
                let j0 = (task % batches_per_block) * BATCH;
                let width = BATCH.min(stride - j0);
                let base = o * block + j0;
                // SAFETY: each task touches the entries base + k*stride + b for
                // b < width, which are disjoint between tasks and in bounds.
                unsafe {
                    for k in 0..n {
                        let row = ptr.0.add(base + k * stride);
                        for b in 0..width {
                            buf[b * n + k] = *row.add(b);
                        }
                    }
                    plan.process_with_scratch(&mut buf[..width * n], scratch);
                    for k in 0..n {
                        let row = ptr.0.add(base + k * stride);
                        for b in 0..width {
                            *row.add(b) = buf[b * n + k];
                        }
                    }
                }
            },
        );
    }
}
