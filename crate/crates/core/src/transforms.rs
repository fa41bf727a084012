//! Orthonormal Haar wavelet and 2-D DFT with amplitude/phase extraction.
//!
//! Functions here work on plain [`Tensor`]s; the differentiable versions live
//! on [`crate::autodiff::Tape`] and share these kernels. Spatial axes are the
//! last two of any tensor, everything before them is treated as a batch of planes.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

/// Regularizer inside the amplitude square root.
pub const EPS_AMP: f64 = 1e-8;

/// One level of wavelet subbands, each `[..., H/2, W/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// Spectrum with the DC bin at index `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    pub re: Tensor,
    pub im: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudePhase {
    pub amplitude: Tensor,
    /// Radians in `(-pi, pi]`.
    pub phase: Tensor,
}

pub(crate) fn check_even(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) || h == 0 || w == 0 {
        return Err(Error::Extent(format!(
            "wavelet analysis needs even spatial extents, got {h}x{w}; pad the input first"
        )));
    }
    Ok(())
}

pub(crate) fn check_pow2(h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::Extent(format!("FFT extents must be powers of two, got {h}x{w}")));
    }
    Ok(())
}

fn spatial(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(shape_err(format!("expected at least 2 spatial axes, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((t.numel() / (h * w), h, w))
}

/// Packed output `[4, planes, h/2, w/2]` in (LL, LH, HL, HH) order.
pub(crate) fn haar_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let band = planes * h2 * w2;
    let mut out = vec![0.0; 4 * band];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                let a = src[2 * i * w + 2 * j];
                let b = src[2 * i * w + 2 * j + 1];
                let c = src[(2 * i + 1) * w + 2 * j];
                let d = src[(2 * i + 1) * w + 2 * j + 1];
                let o = p * h2 * w2 + i * w2 + j;
                out[o] = 0.5 * (a + b + c + d);
                out[band + o] = 0.5 * (a + b - c - d);
                out[2 * band + o] = 0.5 * (a - b + c - d);
                out[3 * band + o] = 0.5 * (a - b - c + d);
            }
        }
    }
    out
}

/// Inverse of [`haar_forward`]; `h`, `w` are the subband extents.
pub(crate) fn haar_inverse(s: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let band = planes * h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..h {
            for j in 0..w {
                let o = p * h * w + i * w + j;
                let (ll, lh, hl, hh) = (s[o], s[band + o], s[2 * band + o], s[3 * band + o]);
                dst[2 * i * wo + 2 * j] = 0.5 * (ll + lh + hl + hh);
                dst[2 * i * wo + 2 * j + 1] = 0.5 * (ll + lh - hl - hh);
                dst[(2 * i + 1) * wo + 2 * j] = 0.5 * (ll - lh + hl - hh);
                dst[(2 * i + 1) * wo + 2 * j + 1] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
    out
}

/// Unnormalized 2-D DFT of each plane. `inverse` flips the exponent sign only.
pub(crate) fn dft2_planes(
    re: &[f64],
    im: Option<&[f64]>,
    planes: usize,
    h: usize,
    w: usize,
    inverse: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut buf: Vec<Complex<f64>> = (0..planes * h * w)
        .map(|i| Complex::new(re[i], im.map_or(0.0, |im| im[i])))
        .collect();
    row_fft.process(&mut buf);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for p in 0..planes {
        let plane = &mut buf[p * h * w..(p + 1) * h * w];
        for j in 0..w {
            for i in 0..h {
                col[i] = plane[i * w + j];
            }
            col_fft.process(&mut col);
            for i in 0..h {
                plane[i * w + j] = col[i];
            }
        }
    }
    buf.into_iter().map(|c| (c.re, c.im)).unzip()
}

#[inline]
pub(crate) fn amp_phase_scalar(re: f64, im: f64) -> (f64, f64) {
    let amp = (re * re + im * im + EPS_AMP * EPS_AMP).sqrt();
    // `+ 0.0` folds a negative zero so the phase stays in (-pi, pi].
    let phase = (im + 0.0).atan2(re);
    (amp, phase)
}

pub fn dwt2(x: &Tensor) -> Result<SubbandSet> {
    let (planes, h, w) = spatial(x)?;
    check_even(h, w)?;
    let packed = haar_forward(x.data(), planes, h, w);
    let mut shape = x.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = h / 2;
    shape[n - 1] = w / 2;
    let band = packed.len() / 4;
    let part = |k: usize| Tensor::from_parts(shape.clone(), packed[k * band..(k + 1) * band].to_vec());
    Ok(SubbandSet { ll: part(0), lh: part(1), hl: part(2), hh: part(3) })
}

pub fn idwt2(s: &SubbandSet) -> Result<Tensor> {
    for other in [&s.lh, &s.hl, &s.hh] {
        ensure_same_shape(&s.ll, other, "subband")?;
    }
    let (planes, h, w) = spatial(&s.ll)?;
    let mut packed = Vec::with_capacity(4 * s.ll.numel());
    for b in [&s.ll, &s.lh, &s.hl, &s.hh] {
        packed.extend_from_slice(b.data());
    }
    let mut shape = s.ll.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = 2 * h;
    shape[n - 1] = 2 * w;
    Ok(Tensor::from_parts(shape, haar_inverse(&packed, planes, h, w)))
}

pub fn fft2(x: &Tensor) -> Result<ComplexSpectrum> {
    let (planes, h, w) = spatial(x)?;
    check_pow2(h, w)?;
    let (re, im) = dft2_planes(x.data(), None, planes, h, w, false);
    Ok(ComplexSpectrum {
        re: Tensor::from_parts(x.shape().to_vec(), re),
        im: Tensor::from_parts(x.shape().to_vec(), im),
    })
}

/// Normalized inverse; returns the full complex result.
pub fn ifft2_complex(k: &ComplexSpectrum) -> Result<ComplexSpectrum> {
    ensure_same_shape(&k.re, &k.im, "spectrum re/im")?;
    let (planes, h, w) = spatial(&k.re)?;
    check_pow2(h, w)?;
    let (mut re, mut im) = dft2_planes(k.re.data(), Some(k.im.data()), planes, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= scale);
    Ok(ComplexSpectrum {
        re: Tensor::from_parts(k.re.shape().to_vec(), re),
        im: Tensor::from_parts(k.re.shape().to_vec(), im),
    })
}

/// Real part of the normalized inverse DFT.
pub fn ifft2(k: &ComplexSpectrum) -> Result<Tensor> {
    Ok(ifft2_complex(k)?.re)
}

pub fn to_amp_phase(k: &ComplexSpectrum) -> Result<AmplitudePhase> {
    ensure_same_shape(&k.re, &k.im, "spectrum re/im")?;
    let (amp, phase): (Vec<f64>, Vec<f64>) =
        k.re.data().iter().zip(k.im.data()).map(|(&r, &i)| amp_phase_scalar(r, i)).unzip();
    let shape = k.re.shape().to_vec();
    Ok(AmplitudePhase {
        amplitude: Tensor::from_parts(shape.clone(), amp),
        phase: Tensor::from_parts(shape, phase),
    })
}

pub fn from_amp_phase(ap: &AmplitudePhase) -> Result<ComplexSpectrum> {
    ensure_same_shape(&ap.amplitude, &ap.phase, "amplitude/phase")?;
    let (re, im): (Vec<f64>, Vec<f64>) = ap
        .amplitude
        .data()
        .iter()
        .zip(ap.phase.data())
        .map(|(&a, &p)| {
            let (s, c) = p.sin_cos();
            (a * c, a * s)
        })
        .unzip();
    let shape = ap.amplitude.shape().to_vec();
    Ok(ComplexSpectrum { re: Tensor::from_parts(shape.clone(), re), im: Tensor::from_parts(shape, im) })
}

/// Moves the DC bin of every plane to `(H/2, W/2)`.
pub fn fftshift(x: &Tensor) -> Result<Tensor> {
    let (planes, h, w) = spatial(x)?;
    let mut out = vec![0.0; x.numel()];
    for p in 0..planes {
        for i in 0..h {
            for j in 0..w {
                let si = (i + h / 2) % h;
                let sj = (j + w / 2) % w;
                out[p * h * w + si * w + sj] = x.data()[p * h * w + i * w + j];
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn naive_dft(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                for i in 0..h {
                    for j in 0..w {
                        let theta = -2.0 * std::f64::consts::PI
                            * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        re[u * w + v] += x[i * w + j] * theta.cos();
                        im[u * w + v] += x[i * w + j] * theta.sin();
                    }
                }
            }
        }
        (re, im)
    }

    #[test]
    fn haar_of_ones_block() {
        let s = dwt2(&Tensor::ones([2, 2])).unwrap();
        assert_eq!(s.ll.data(), &[2.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn haar_roundtrip_and_energy() {
        let mut rng = rng_from_seed(3);
        let x = Tensor::randn([1, 1, 8, 8], 1.0, &mut rng);
        let s = dwt2(&x).unwrap();
        let back = idwt2(&s).unwrap();
        assert!(x.max_abs_diff(&back) <= 1e-10);
        let energy = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        let bands = energy(&s.ll) + energy(&s.lh) + energy(&s.hl) + energy(&s.hh);
        assert!((energy(&x) - bands).abs() <= 1e-10);
    }

    #[test]
    fn haar_rejects_odd_extent() {
        let err = dwt2(&Tensor::zeros([3, 4])).unwrap_err();
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn idwt_of_zero_and_ll_only() {
        let z = Tensor::zeros([4, 4]);
        let s = SubbandSet { ll: z.clone(), lh: z.clone(), hl: z.clone(), hh: z.clone() };
        assert_eq!(idwt2(&s).unwrap(), Tensor::zeros([8, 8]));
        let c = Tensor::full([8, 8], 1.5);
        let mut s = dwt2(&c).unwrap();
        s.lh = z.clone();
        s.hl = z.clone();
        s.hh = z;
        assert_eq!(idwt2(&s).unwrap(), c);
    }

    #[test]
    fn idwt_rejects_mismatched_bands() {
        let s = SubbandSet {
            ll: Tensor::zeros([2, 2]),
            lh: Tensor::zeros([2, 2]),
            hl: Tensor::zeros([2, 3]),
            hh: Tensor::zeros([2, 2]),
        };
        assert!(idwt2(&s).is_err());
    }

    #[test]
    fn dwt_of_idwt_roundtrip() {
        let mut rng = rng_from_seed(9);
        let s = SubbandSet {
            ll: Tensor::randn([2, 3, 4], 1.0, &mut rng),
            lh: Tensor::randn([2, 3, 4], 1.0, &mut rng),
            hl: Tensor::randn([2, 3, 4], 1.0, &mut rng),
            hh: Tensor::randn([2, 3, 4], 1.0, &mut rng),
        };
        let s2 = dwt2(&idwt2(&s).unwrap()).unwrap();
        for (a, b) in [(&s.ll, &s2.ll), (&s.lh, &s2.lh), (&s.hl, &s2.hl), (&s.hh, &s2.hh)] {
            assert!(a.max_abs_diff(b) <= 1e-10);
        }
    }

    #[test]
    fn fft_impulse_and_constant() {
        let mut x = Tensor::zeros([4, 8]);
        x.data_mut()[0] = 1.0;
        let k = fft2(&x).unwrap();
        assert!(k.re.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(k.im.data().iter().all(|&v| v.abs() < 1e-15));

        let k = fft2(&Tensor::full([8, 8], 2.5)).unwrap();
        assert!((k.re.data()[0] - 2.5 * 64.0).abs() < 1e-12);
        assert!(k.re.data()[1..].iter().chain(k.im.data()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = rng_from_seed(11);
        let x = Tensor::randn([8, 8], 1.0, &mut rng);
        let k = fft2(&x).unwrap();
        let (re, im) = naive_dft(x.data(), 8, 8);
        for i in 0..64 {
            assert!((k.re.data()[i] - re[i]).abs() <= 1e-10);
            assert!((k.im.data()[i] - im[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn fft_rejects_non_pow2() {
        assert!(matches!(fft2(&Tensor::zeros([6, 8])), Err(Error::Extent(_))));
    }

    #[test]
    fn parseval_and_inverse() {
        let mut rng = rng_from_seed(5);
        let x = Tensor::randn([2, 16, 8], 1.0, &mut rng);
        let k = fft2(&x).unwrap();
        let e_x: f64 = x.data().iter().map(|v| v * v).sum();
        let e_k: f64 = k.re.data().iter().zip(k.im.data()).map(|(r, i)| r * r + i * i).sum();
        assert!(((e_x - e_k / 128.0) / e_x).abs() <= 1e-9);
        let back = ifft2_complex(&k).unwrap();
        assert!(back.re.max_abs_diff(&x) <= 1e-9);
        assert!(back.im.data().iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn conjugate_symmetry_of_real_input() {
        let mut rng = rng_from_seed(21);
        let (h, w) = (8, 4);
        let x = Tensor::randn([h, w], 1.0, &mut rng);
        let k = fft2(&x).unwrap();
        for u in 0..h {
            for v in 0..w {
                let m = ((h - u) % h) * w + (w - v) % w;
                assert!((k.re.data()[u * w + v] - k.re.data()[m]).abs() <= 1e-10);
                assert!((k.im.data()[u * w + v] + k.im.data()[m]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn amp_phase_closed_forms() {
        let k = ComplexSpectrum {
            re: Tensor::new([2], vec![3.0, 0.0]).unwrap(),
            im: Tensor::new([2], vec![4.0, 0.0]).unwrap(),
        };
        let ap = to_amp_phase(&k).unwrap();
        assert!((ap.amplitude.data()[0] - 5.0).abs() < 1e-12);
        assert!((ap.phase.data()[0] - 0.9272952180016122).abs() < 1e-15);
        assert_eq!(ap.amplitude.data()[1], EPS_AMP);
        assert_eq!(ap.phase.data()[1], 0.0);
    }

    #[test]
    fn phase_range_folds_negative_zero() {
        let (_, p) = amp_phase_scalar(-1.0, -0.0);
        assert_eq!(p, std::f64::consts::PI);
    }

    #[test]
    fn amp_phase_roundtrip() {
        let mut rng = rng_from_seed(8);
        let k = ComplexSpectrum {
            re: Tensor::randn([4, 4], 3.0, &mut rng),
            im: Tensor::randn([4, 4], 3.0, &mut rng),
        };
        let back = from_amp_phase(&to_amp_phase(&k).unwrap()).unwrap();
        assert!(back.re.max_abs_diff(&k.re) <= 1e-8);
        assert!(back.im.max_abs_diff(&k.im) <= 1e-8);
        let ap = to_amp_phase(&k).unwrap();
        for (a, p) in ap.amplitude.data().iter().zip(ap.phase.data()) {
            assert!(*a >= 0.0 && *p > -std::f64::consts::PI && *p <= std::f64::consts::PI);
        }
    }

    #[test]
    fn transforms_are_linear() {
        let mut rng = rng_from_seed(13);
        let x = Tensor::randn([8, 8], 1.0, &mut rng);
        let y = Tensor::randn([8, 8], 1.0, &mut rng);
        let (a, b) = (1.7, -0.3);
        let comb = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let (kx, ky, kc) = (fft2(&x).unwrap(), fft2(&y).unwrap(), fft2(&comb).unwrap());
        let lin = kx.re.zip_map(&ky.re, |p, q| a * p + b * q).unwrap();
        assert!(lin.max_abs_diff(&kc.re) <= 1e-10);
        let (sx, sy, sc) = (dwt2(&x).unwrap(), dwt2(&y).unwrap(), dwt2(&comb).unwrap());
        let lin = sx.hh.zip_map(&sy.hh, |p, q| a * p + b * q).unwrap();
        assert!(lin.max_abs_diff(&sc.hh) <= 1e-10);
    }
}
