//! Frequency-aware spectral decoupling: amplitude and phase of the current
//! image estimate are refined by separate convolutional branches and turned
//! back into an image-domain correction.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv, ParamStore, Session};
use crate::tensor::Tensor;
use crate::transforms::{self, check_pow2};

pub const DEFAULT_HIDDEN: usize = 16;

/// Spectral coordinate map `[3, H, W]` in DC-at-origin layout.
///
/// Channels are the normalized row and column frequency and their radial
/// norm, evaluated on the centered grid and then moved back so that bin
/// `(0, 0)` has radius zero.
pub fn build_scm(h: usize, w: usize) -> Result<Tensor> {
    if h < 2 || w < 2 {
        return Err(Error::Extent(format!("coordinate map needs at least 2x2, got {h}x{w}")));
    }
    let mut data = vec![0.0; 3 * h * w];
    for u in 0..h {
        for v in 0..w {
            // Bin (u, v) sits at (u + H/2, v + W/2) of the centered grid.
            let us = (u + h / 2) % h;
            let vs = (v + w / 2) % w;
            let c0 = 2.0 * us as f64 / h as f64 - 1.0;
            let c1 = 2.0 * vs as f64 / w as f64 - 1.0;
            let i = u * w + v;
            data[i] = c0;
            data[h * w + i] = c1;
            data[2 * h * w + i] = (c0 * c0 + c1 * c1).sqrt();
        }
    }
    Tensor::new([3, h, w], data)
}

/// `conv3x3 -> SiLU -> conv3x3` plus a residual path. The second conv starts
/// at zero, so a fresh block passes its (projected) input through unchanged.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub proj: Option<Conv>,
    pub cin: usize,
    pub cout: usize,
}

impl ConvBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = Conv::new(store, &format!("{name}.conv1"), cin, hidden, 3, rng);
        let conv2 = Conv::zeros(store, &format!("{name}.conv2"), hidden, cout, 3);
        let proj = (cin != cout).then(|| {
            // Starts as a channel selector: output k copies input k.
            let mut w = Tensor::zeros([cout, cin, 1, 1]);
            for k in 0..cout.min(cin) {
                w.data_mut()[k * cin + k] = 1.0;
            }
            Conv::from_tensors(store, &format!("{name}.proj"), w, Tensor::zeros([cout]))
        });
        Self { conv1, conv2, proj, cin, cout }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = s.tape.silu(h);
        let h = self.conv2.forward(s, h)?;
        let skip = match &self.proj {
            Some(p) => p.forward(s, x)?,
            None => x,
        };
        s.tape.add(skip, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FasdBlock {
    pub amp: ConvBlock,
    pub phase1: ConvBlock,
    pub phase2: ConvBlock,
}

/// Correction plus the energy split of the inverse transform.
#[derive(Clone, Copy, Debug)]
pub struct FasdOutput {
    /// Real part of the inverse transform of the spectral residual, `[N, 1, H, W]`.
    pub delta: Var,
    /// Sum of squares of the discarded imaginary part.
    pub imag_energy: f64,
    /// Sum of squares of `delta`.
    pub real_energy: f64,
}

impl FasdBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut R) -> Self {
        Self {
            amp: ConvBlock::new(store, &format!("{name}.amp"), 4, 1, hidden, rng),
            phase1: ConvBlock::new(store, &format!("{name}.phase1"), 1, 1, hidden, rng),
            phase2: ConvBlock::new(store, &format!("{name}.phase2"), 1, 1, hidden, rng),
        }
    }

    /// `x` is the single-channel image estimate `[N, 1, H, W]`; `scm` is the
    /// coordinate map broadcast to `[N, 3, H, W]` (see [`scm_batch`]).
    pub fn forward(&self, s: &mut Session, x: Var, scm: Var) -> Result<FasdOutput> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::Shape(format!("spectral branch expects [N, 1, H, W], got {shape:?}")));
        }
        check_pow2(shape[2], shape[3])?;

        let k = s.tape.fft2(x)?;
        let ap = s.tape.amp_phase(k)?;
        let a0 = s.tape.select0(ap, 0)?;
        let p0 = s.tape.select0(ap, 1)?;

        let amp_in = s.tape.concat(&[a0, scm], 1)?;
        let a_hat = self.amp.forward(s, amp_in)?;
        let p1 = self.phase1.forward(s, p0)?;
        let p_hat = self.phase2.forward(s, p1)?;

        let refined = s.tape.stack0(&[a_hat, p_hat])?;
        let k_hat = s.tape.from_amp_phase(refined)?;
        // The reference is the spectrum rebuilt from (A0, P0) rather than the raw
        // FFT so that identity branches give an exactly zero residual.
        let k_ref = s.tape.from_amp_phase(ap)?;
        let dk = s.tape.sub(k_hat, k_ref)?;
        let z = s.tape.ifft2(dk)?;
        let delta = s.tape.select0(z, 0)?;
        let imag = s.tape.value(z).index0(1)?;
        let imag_energy = imag.data().iter().map(|v| v * v).sum();
        let real_energy = s.tape.value(delta).data().iter().map(|v| v * v).sum();
        Ok(FasdOutput { delta, imag_energy, real_energy })
    }
}

/// Repeats a `[3, H, W]` coordinate map over a batch of `n`.
pub fn scm_batch(scm: &Tensor, n: usize) -> Result<Tensor> {
    let parts: Vec<&Tensor> = std::iter::repeat_n(scm, n).collect();
    Tensor::stack(&parts)
}

/// `(log(1 + |K|), phase)` of a `[H, W]` image, both in centered layout.
pub fn log_spectrum_export(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let k = transforms::fft2(x)?;
    let mag = k.re.zip_map(&k.im, |r, i| r.hypot(i).ln_1p())?;
    let phase = transforms::to_amp_phase(&k)?.phase;
    Ok((transforms::fftshift(&mag)?, transforms::fftshift(&phase)?))
}
