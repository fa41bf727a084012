//! Image-quality, quantitative-PET and physical-validation metrics.
//!
//! Images are flat row-major planes; masks are `bool` planes of the same size.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::phantom::REGION_NAMES;

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("{what}: operands hold {} and {} values", a.len(), b.len())));
    }
    Ok(())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the images are equal.
pub fn psnr(pred: &[f64], reference: &[f64], data_range: f64) -> Result<f64> {
    same_len(pred, reference, "psnr")?;
    let mse = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// PSNR with the data range taken as the reference maximum.
pub fn psnr_ref(pred: &[f64], reference: &[f64]) -> Result<f64> {
    psnr(pred, reference, max_of(reference))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut t = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (k, v) in t.iter_mut().enumerate() {
        let d = k as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.map(|v| v / s)
}

/// Valid-mode separable filtering with the SSIM window.
fn window_filter(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = taps.iter().enumerate().map(|(k, t)| t * x[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = taps.iter().enumerate().map(|(k, t)| t * rows[(i + k) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions with an explicit dynamic range.
pub fn ssim_with_range(pred: &[f64], reference: &[f64], h: usize, w: usize, range: f64) -> Result<f64> {
    same_len(pred, reference, "ssim")?;
    if pred.len() != h * w || h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Extent(format!("ssim needs an image of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let taps = ssim_taps();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let sq = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
    let mx = window_filter(pred, h, w, &taps);
    let my = window_filter(reference, h, w, &taps);
    let mxx = window_filter(&sq(pred, pred), h, w, &taps);
    let myy = window_filter(&sq(reference, reference), h, w, &taps);
    let mxy = window_filter(&sq(pred, reference), h, w, &taps);
    let mut total = 0.0;
    for k in 0..mx.len() {
        let (ux, uy) = (mx[k], my[k]);
        let vx = mxx[k] - ux * ux;
        let vy = myy[k] - uy * uy;
        let cxy = mxy[k] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// SSIM with the dynamic range taken from the reference maximum (1 if that is not positive).
pub fn ssim(pred: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64> {
    let m = max_of(reference);
    ssim_with_range(pred, reference, h, w, if m > 0.0 { m } else { 1.0 })
}

/// Normalized mean absolute error in percent.
pub fn nmae(pred: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(pred, reference, "nmae")?;
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r).abs()).sum();
    let den: f64 = reference.iter().map(|r| r.abs()).sum();
    Ok(100.0 * num / den)
}

/// Normalized mean squared error.
pub fn nmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(pred, reference, "nmse")?;
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    let den: f64 = reference.iter().map(|r| r * r).sum();
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub nmae: f64,
    pub nmse: f64,
}

pub fn image_metrics(pred: &[f64], reference: &[f64], h: usize, w: usize) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        psnr: psnr_ref(pred, reference)?,
        ssim: ssim(pred, reference, h, w)?,
        nmae: nmae(pred, reference)?,
        nmse: nmse(pred, reference)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Non-finite values left out of the statistics.
    pub excluded: usize,
}

/// Mean and sample standard deviation over the finite values.
pub fn summarize(values: &[f64]) -> Summary {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = values.len() - finite.len();
    if excluded > 0 {
        log::warn!("{excluded} non-finite value(s) excluded from a summary");
    }
    let n = finite.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN, n, excluded };
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n, excluded }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VoiStats {
    pub suv_max: f64,
    pub suv_mean: f64,
    pub volume: usize,
    pub tlg: f64,
}

pub fn voi_stats(img: &[f64], mask: &[bool]) -> Result<VoiStats> {
    if img.len() != mask.len() {
        return Err(Error::Shape(format!("image has {} values, mask {}", img.len(), mask.len())));
    }
    let vals: Vec<f64> = img.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    let suv_mean = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok(VoiStats { suv_max: max_of(&vals), suv_mean, volume: vals.len(), tlg: suv_mean * vals.len() as f64 })
}

pub const GLCM_LEVELS: usize = 16;
pub const GLCM_OFFSETS: [(usize, usize); 2] = [(0, 1), (1, 0)];

/// Normalized symmetric co-occurrence matrix (`levels x levels`, row-major)
/// over pixel pairs with both members inside the mask.
pub fn glcm(img: &[f64], mask: &[bool], h: usize, w: usize, levels: usize) -> Result<Vec<f64>> {
    if img.len() != h * w || mask.len() != h * w {
        return Err(Error::Shape(format!("glcm expects {h}x{w} image and mask")));
    }
    if levels == 0 {
        return Err(Error::Validation("glcm needs at least one level".into()));
    }
    let vals: Vec<f64> = img.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = max_of(&vals);
    let bin = |v: f64| -> usize {
        if hi > lo {
            (((v - lo) / (hi - lo) * levels as f64) as usize).min(levels - 1)
        } else {
            0
        }
    };
    let mut p = vec![0.0; levels * levels];
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            if !mask[i * w + j] {
                continue;
            }
            for (di, dj) in GLCM_OFFSETS {
                let (ii, jj) = (i + di, j + dj);
                if ii < h && jj < w && mask[ii * w + jj] {
                    let (a, b) = (bin(img[i * w + j]), bin(img[ii * w + jj]));
                    p[a * levels + b] += 1.0;
                    p[b * levels + a] += 1.0;
                    total += 2.0;
                }
            }
        }
    }
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GlcmFeatures {
    pub contrast: f64,
    pub homogeneity: f64,
}

/// Contrast and homogeneity; a mask without any in-mask neighbour pair counts as uniform.
pub fn glcm_features(img: &[f64], mask: &[bool], h: usize, w: usize, levels: usize) -> Result<GlcmFeatures> {
    let p = glcm(img, mask, h, w, levels)?;
    if p.iter().all(|&v| v == 0.0) {
        return Ok(GlcmFeatures { contrast: 0.0, homogeneity: 1.0 });
    }
    let (mut contrast, mut homogeneity) = (0.0, 0.0);
    for a in 0..levels {
        for b in 0..levels {
            let d = a.abs_diff(b) as f64;
            contrast += p[a * levels + b] * d * d;
            homogeneity += p[a * levels + b] / (1.0 + d);
        }
    }
    Ok(GlcmFeatures { contrast, homogeneity })
}

/// Absolute relative bias of regional means in percent, for lung, soft and bone.
/// A region absent from `labels` yields `None`.
pub fn region_bias(pred: &[f64], reference: &[f64], labels: &[f64]) -> Result<Vec<(&'static str, Option<f64>)>> {
    same_len(pred, reference, "region_bias")?;
    if labels.len() != pred.len() {
        return Err(Error::Shape("region labels differ in size from the image".into()));
    }
    Ok(REGION_NAMES
        .iter()
        .map(|&(code, name)| {
            let (mut sp, mut sr, mut n) = (0.0, 0.0, 0usize);
            for k in 0..pred.len() {
                if labels[k] == f64::from(code) {
                    sp += pred[k];
                    sr += reference[k];
                    n += 1;
                }
            }
            let bias = (n > 0).then(|| {
                let (mp, mr) = (sp / n as f64, sr / n as f64);
                100.0 * (mp - mr).abs() / mr
            });
            (name, bias)
        })
        .collect())
}

/// Reference values below this are left out of relative-error profiles.
pub const REF_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthProfile {
    /// `n_bins + 1` equally spaced edges over `[0, max depth]`.
    pub edges: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub count: Vec<usize>,
}

/// Mean and variance of `|pred - ref| / ref` per depth bin over masked pixels.
pub fn depth_error_profile(
    pred: &[f64],
    reference: &[f64],
    depth: &[f64],
    mask: &[bool],
    n_bins: usize,
) -> Result<DepthProfile> {
    same_len(pred, reference, "depth_error_profile")?;
    if depth.len() != pred.len() || mask.len() != pred.len() {
        return Err(Error::Shape("depth map or mask differs in size from the image".into()));
    }
    if n_bins == 0 {
        return Err(Error::Validation("depth profile needs at least one bin".into()));
    }
    let idx: Vec<usize> = (0..pred.len()).filter(|&k| mask[k] && reference[k] >= REF_EPS).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let dmax = idx.iter().map(|&k| depth[k]).fold(0.0, f64::max);
    let mut edges: Vec<f64> = (0..=n_bins).map(|b| dmax * b as f64 / n_bins as f64).collect();
    edges[n_bins] = dmax;
    let mut sums = vec![0.0; n_bins];
    let mut sq = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for &k in &idx {
        let b = if dmax > 0.0 { ((depth[k] / dmax * n_bins as f64) as usize).min(n_bins - 1) } else { 0 };
        let e = (pred[k] - reference[k]).abs() / reference[k];
        sums[b] += e;
        sq[b] += e * e;
        count[b] += 1;
    }
    let mut mean = vec![f64::NAN; n_bins];
    let mut variance = vec![f64::NAN; n_bins];
    for b in 0..n_bins {
        if count[b] > 0 {
            let n = count[b] as f64;
            mean[b] = sums[b] / n;
            variance[b] = (sq[b] / n - mean[b] * mean[b]).max(0.0);
        }
    }
    Ok(DepthProfile { edges, mean, variance, count })
}

/// Pearson correlation from centered co-moments accumulated in one pass.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b, "pearson")?;
    let (mut ma, mut mb, mut caa, mut cbb, mut cab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&x, &y)) in a.iter().zip(b).enumerate() {
        let n = (k + 1) as f64;
        let (dx, dy) = (x - ma, y - mb);
        ma += dx / n;
        mb += dy / n;
        caa += dx * (x - ma);
        cbb += dy * (y - mb);
        cab += dx * (y - mb);
    }
    Ok(cab / (caa * cbb).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut s = 0;
    while s < order.len() {
        let mut e = s;
        while e + 1 < order.len() && v[order[e + 1]] == v[order[s]] {
            e += 1;
        }
        let r = (s + e) as f64 / 2.0 + 1.0;
        for &k in &order[s..=e] {
            ranks[k] = r;
        }
        s = e + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b, "spearman")?;
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointHistogram {
    /// `n_bins x n_bins`, rows indexed by the reference bin.
    pub counts: Vec<u64>,
    pub n_bins: usize,
    pub lo: f64,
    pub hi: f64,
    pub pearson_r: f64,
    pub rmse: f64,
}

pub fn joint_histogram(pred: &[f64], reference: &[f64], mask: &[bool], n_bins: usize) -> Result<JointHistogram> {
    same_len(pred, reference, "joint_histogram")?;
    if mask.len() != pred.len() {
        return Err(Error::Shape("mask differs in size from the image".into()));
    }
    if n_bins == 0 {
        return Err(Error::Validation("joint histogram needs at least one bin".into()));
    }
    let (p, r): (Vec<f64>, Vec<f64>) =
        pred.iter().zip(reference).zip(mask).filter(|(_, &m)| m).map(|((&p, &r), _)| (p, r)).unzip();
    if p.is_empty() {
        return Err(Error::EmptyMask);
    }
    let lo = p.iter().chain(&r).copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().chain(&r).copied().fold(f64::NEG_INFINITY, f64::max);
    let bin = |v: f64| if hi > lo { (((v - lo) / (hi - lo) * n_bins as f64) as usize).min(n_bins - 1) } else { 0 };
    let mut counts = vec![0u64; n_bins * n_bins];
    for (&x, &y) in p.iter().zip(&r) {
        counts[bin(y) * n_bins + bin(x)] += 1;
    }
    let rmse = (p.iter().zip(&r).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / p.len() as f64).sqrt();
    Ok(JointHistogram { counts, n_bins, lo, hi, pearson_r: pearson(&p, &r)?, rmse })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_form() {
        let r = vec![1.0, 0.0, 0.0, 0.0];
        let p = vec![1.0, 0.2, 0.0, 0.0];
        assert!((psnr(&p, &r, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn scaled_prediction_closed_forms() {
        let r: Vec<f64> = (1..=20).map(f64::from).collect();
        let p: Vec<f64> = r.iter().map(|v| 1.1 * v).collect();
        assert!((nmae(&p, &r).unwrap() - 10.0).abs() < 1e-10);
        assert!((nmse(&p, &r).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(nmae(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn voi_basics() {
        let img = vec![3.0; 10];
        let s = voi_stats(&img, &[true; 10]).unwrap();
        assert_eq!((s.suv_max, s.suv_mean, s.volume, s.tlg), (3.0, 3.0, 10, 30.0));
        assert!(matches!(voi_stats(&img, &[false; 10]), Err(Error::EmptyMask)));
    }

    #[test]
    fn summary_excludes_infinite() {
        let s = summarize(&[1.0, 3.0, f64::INFINITY]);
        assert_eq!((s.mean, s.n, s.excluded), (2.0, 2, 1));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }
}
