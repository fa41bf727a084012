//! Synthetic paired PET slices.
//!
//! A phantom is an elliptical torso with lungs, spine, ribs, a tracer-dependent
//! hot organ and a few lesions. The ASC image is the blurred activity; the NASC
//! image multiplies it by the photon survival along eight rays (Beer–Lambert),
//! adds blurred scatter and, optionally, Poisson noise.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::{derive_seed, rng_from_seed, DetRng};
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const SOFT: u8 = 1;
pub const LUNG: u8 = 2;
pub const BONE: u8 = 3;

pub const REGION_NAMES: [(u8, &str); 3] = [(LUNG, "lung"), (SOFT, "soft"), (BONE, "bone")];

/// Photon survival is averaged over this many equally spaced ray directions.
pub const RAY_COUNT: usize = 8;
pub const RAY_STEP: f64 = 0.5;
pub const DEFAULT_SCATTER_FRACTION: f64 = 0.15;

/// Generation parameters standing in for one scanner/tracer protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFamily {
    pub name: String,
    /// Horizontal body semi-axis as a fraction of half the field of view.
    pub body_size: (f64, f64),
    /// Vertical over horizontal semi-axis.
    pub aspect: (f64, f64),
    pub fov_cm: f64,
    /// Linear attenuation at 511 keV in 1/cm.
    pub mu_soft: f64,
    pub mu_lung: f64,
    pub mu_bone: f64,
    pub activity_soft: f64,
    pub activity_lung: f64,
    pub activity_bone: f64,
    /// Hot-organ uptake relative to soft tissue.
    pub organ_uptake: f64,
    pub max_lesions: usize,
    /// Lesion uptake relative to soft tissue.
    pub lesion_contrast: (f64, f64),
    /// Expected counts per unit activity; higher is less noisy.
    pub count_level: f64,
    /// Resolution blur in pixels (at 64 pixels across the field of view).
    pub blur_sigma: f64,
    pub scatter_fraction: f64,
    pub scatter_sigma: f64,
}

impl DomainFamily {
    fn base(name: &str) -> Self {
        Self {
            name: name.to_string(),
            body_size: (0.55, 0.85),
            aspect: (0.6, 0.8),
            fov_cm: 40.0,
            mu_soft: 0.096,
            mu_lung: 0.03,
            mu_bone: 0.17,
            activity_soft: 1.0,
            activity_lung: 0.25,
            activity_bone: 0.5,
            organ_uptake: 2.5,
            max_lesions: 3,
            lesion_contrast: (3.0, 6.0),
            count_level: 800.0,
            blur_sigma: 1.0,
            scatter_fraction: DEFAULT_SCATTER_FRACTION,
            scatter_sigma: 6.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Validation(format!("family {}: {what}", self.name)));
        let pos = [
            self.body_size.0,
            self.aspect.0,
            self.fov_cm,
            self.mu_soft,
            self.mu_lung,
            self.mu_bone,
            self.activity_soft,
            self.activity_lung,
            self.activity_bone,
            self.organ_uptake,
            self.lesion_contrast.0,
            self.count_level,
            self.blur_sigma,
            self.scatter_fraction,
            self.scatter_sigma,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_lesions == 0 {
            return bad("all parameters must be strictly positive");
        }
        for (lo, hi) in [self.body_size, self.aspect, self.lesion_contrast] {
            if lo > hi {
                return bad("range bounds out of order");
            }
        }
        if self.body_size.1 > 0.9 || self.aspect.1 > 1.0 {
            return bad("body must fit inside the field of view");
        }
        if self.name.is_empty() || self.name.contains(['/', '\\', '\t', '\n']) {
            return bad("name must be a plain path component");
        }
        Ok(())
    }
}

pub const TRAIN_FAMILY: &str = "siemens-fdg";

/// The six protocol stand-ins. Attenuation constants are shared (anatomy does
/// not depend on the protocol); uptake, lesion statistics, resolution, noise and
/// scatter differ.
pub fn families() -> Vec<DomainFamily> {
    let fdg = DomainFamily::base(TRAIN_FAMILY);
    let dotatate = DomainFamily {
        activity_soft: 0.6,
        organ_uptake: 6.0,
        max_lesions: 4,
        lesion_contrast: (5.0, 8.0),
        count_level: 400.0,
        blur_sigma: 1.2,
        ..DomainFamily::base("siemens-dotatate")
    };
    let mfbg = DomainFamily {
        activity_soft: 0.8,
        organ_uptake: 4.0,
        lesion_contrast: (4.0, 7.0),
        count_level: 600.0,
        ..DomainFamily::base("siemens-mfbg")
    };
    let fapi = DomainFamily {
        body_size: (0.7, 0.88),
        activity_soft: 0.5,
        organ_uptake: 1.5,
        lesion_contrast: (6.0, 8.0),
        count_level: 600.0,
        ..DomainFamily::base("siemens-fapi")
    };
    let su_fdg = DomainFamily {
        count_level: 1500.0,
        blur_sigma: 1.6,
        scatter_fraction: 0.18,
        scatter_sigma: 7.0,
        ..DomainFamily::base("sinounion-fdg")
    };
    let su_mfbg = DomainFamily {
        activity_soft: 0.8,
        organ_uptake: 4.0,
        lesion_contrast: (4.0, 7.0),
        count_level: 1200.0,
        blur_sigma: 1.6,
        scatter_fraction: 0.18,
        scatter_sigma: 7.0,
        ..DomainFamily::base("sinounion-mfbg")
    };
    vec![fdg, dotatate, mfbg, fapi, su_fdg, su_mfbg]
}

pub fn family(name: &str) -> Result<DomainFamily> {
    families()
        .into_iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::Validation(format!("unknown phantom family {name:?}")))
}

/// Families pooled for joint training (the protocols without FAPI).
pub fn joint_families() -> Vec<DomainFamily> {
    families().into_iter().filter(|f| f.name != "siemens-fapi").collect()
}

/// Every family except the single training family.
pub fn held_out_families() -> Vec<DomainFamily> {
    families().into_iter().filter(|f| f.name != TRAIN_FAMILY).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    /// `[1, H, W]` ground-truth activity.
    pub asc: Tensor,
    /// `[1, H, W]` attenuation per pixel.
    pub mu: Tensor,
    /// `[1, H, W]` uncorrected input.
    pub nasc: Tensor,
    /// `[1, H, W]` region codes.
    pub labels: Tensor,
    /// `[L, H, W]` binary lesion masks.
    pub lesions: Tensor,
    /// `[1, H, W]` distance to the body surface in pixels.
    pub depth: Tensor,
    pub domain: String,
}

impl PhantomSample {
    pub fn extent(&self) -> (usize, usize) {
        let s = self.asc.shape();
        (s[1], s[2])
    }

    pub fn body_mask(&self) -> Vec<bool> {
        self.labels.data().iter().map(|&l| l != 0.0).collect()
    }

    pub fn lesion_masks(&self) -> Vec<Vec<bool>> {
        let n = self.lesions.shape()[0];
        let plane = self.lesions.numel() / n.max(1);
        (0..n).map(|k| self.lesions.data()[k * plane..(k + 1) * plane].iter().map(|&v| v > 0.5).collect()).collect()
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        u * u + v * v <= 1.0
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Normalized 1-D Gaussian taps truncated at three sigma.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur of an `[H, W]` plane with zero padding.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let jj = j as isize + t as isize - r;
                if (0..w as isize).contains(&jj) {
                    acc += k * plane[i * w + jj as usize];
                }
            }
            tmp[i * w + j] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let ii = i as isize + t as isize - r;
                if (0..h as isize).contains(&ii) {
                    acc += k * tmp[ii as usize * w + j];
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

const RAY_DIRS: [(f64, f64); RAY_COUNT] = [
    (1.0, 0.0),
    (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (0.0, -1.0),
    (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

/// Midpoint-rule line integral of `mu` from pixel `(i, j)`'s center to the
/// image edge along `dir` (x = column, y = row), nearest-pixel sampling.
pub fn ray_integral(mu: &[f64], h: usize, w: usize, i: usize, j: usize, dir: (f64, f64), step: f64) -> f64 {
    let (x0, y0) = (j as f64 + 0.5, i as f64 + 0.5);
    let mut acc = 0.0;
    for m in 0.. {
        let t = (m as f64 + 0.5) * step;
        let (x, y) = (x0 + t * dir.0, y0 + t * dir.1);
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            break;
        }
        acc += mu[y as usize * w + x as usize];
    }
    acc * step
}

/// Mean photon survival over [`RAY_COUNT`] directions for every pixel of an `[H, W]` map.
pub fn survival(mu: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    if mu.len() != h * w {
        return Err(Error::Shape(format!("attenuation map holds {} values, expected {h}x{w}", mu.len())));
    }
    if let Some(v) = mu.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Validation(format!("attenuation must be finite and non-negative, found {v}")));
    }
    let mut s = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let total: f64 = RAY_DIRS.iter().map(|&d| (-ray_integral(mu, h, w, i, j, d, RAY_STEP)).exp()).sum();
            s[i * w + j] = total / RAY_COUNT as f64;
        }
    }
    Ok(s)
}

/// Intermediate products of the forward model, each `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardModel {
    pub survival: Tensor,
    pub primary: Tensor,
    pub scatter: Tensor,
    pub nasc: Tensor,
}

/// Attenuates `asc` by the survival under `mu`, adds blurred scatter and, when
/// `noise` is given, Poisson noise at the family count level.
pub fn attenuate_and_scatter(
    asc: &Tensor,
    mu: &Tensor,
    family: &DomainFamily,
    noise: Option<&mut DetRng>,
) -> Result<ForwardModel> {
    if asc.shape() != mu.shape() || asc.ndim() != 3 || asc.shape()[0] != 1 {
        return Err(Error::Shape(format!(
            "activity and attenuation must both be [1, H, W], got {:?} and {:?}",
            asc.shape(),
            mu.shape()
        )));
    }
    let (h, w) = (asc.shape()[1], asc.shape()[2]);
    let s = survival(mu.data(), h, w)?;
    let primary: Vec<f64> = asc.data().iter().zip(&s).map(|(a, s)| a * s).collect();
    let scatter: Vec<f64> = if family.scatter_fraction > 0.0 {
        let sigma = family.scatter_sigma * w as f64 / 64.0;
        gaussian_blur(&primary, h, w, sigma).into_iter().map(|v| family.scatter_fraction * v).collect()
    } else {
        vec![0.0; h * w]
    };
    let mut nasc: Vec<f64> = primary.iter().zip(&scatter).map(|(p, s)| p + s).collect();
    if let Some(rng) = noise {
        let k = family.count_level;
        for v in nasc.iter_mut() {
            let lambda = *v * k;
            *v = if lambda > 0.0 {
                Poisson::new(lambda).map_err(|e| Error::Validation(e.to_string()))?.sample(rng) / k
            } else {
                0.0
            };
        }
    }
    let shape = vec![1, h, w];
    Ok(ForwardModel {
        survival: Tensor::new(shape.clone(), s)?,
        primary: Tensor::new(shape.clone(), primary)?,
        scatter: Tensor::new(shape.clone(), scatter)?,
        nasc: Tensor::new(shape, nasc)?,
    })
}

/// Squared-distance transform of one line (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so k never drops below zero
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Depth below the body surface: Euclidean distance to the nearest background
/// pixel (the image exterior counts as background) minus one, so pixels that
/// touch the background edge-on have depth 0. Zero outside the body.
pub fn depth_map(body: &[bool], h: usize, w: usize) -> Result<Tensor> {
    if body.len() != h * w {
        return Err(Error::Shape(format!("mask holds {} values, expected {h}x{w}", body.len())));
    }
    let (ph, pw) = (h + 2, w + 2);
    const FAR: f64 = 1e18;
    let mut g = vec![0.0; ph * pw];
    for i in 0..h {
        for j in 0..w {
            if body[i * w + j] {
                g[(i + 1) * pw + j + 1] = FAR;
            }
        }
    }
    let n = ph.max(pw);
    let (mut f, mut out, mut v, mut z) = (vec![0.0; n], vec![0.0; n], vec![0usize; n], vec![0.0; n + 1]);
    for j in 0..pw {
        for i in 0..ph {
            f[i] = g[i * pw + j];
        }
        edt_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for i in 0..ph {
            g[i * pw + j] = out[i];
        }
    }
    for i in 0..ph {
        f[..pw].copy_from_slice(&g[i * pw..(i + 1) * pw]);
        edt_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        g[i * pw..(i + 1) * pw].copy_from_slice(&out[..pw]);
    }
    let mut depth = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            if body[i * w + j] {
                depth[i * w + j] = g[(i + 1) * pw + j + 1].sqrt() - 1.0;
            }
        }
    }
    Tensor::new([1, h, w], depth)
}

/// Draws one phantom. The result is a pure function of `(seed, family, h, w)`.
pub fn generate_phantom(seed: u64, family: &DomainFamily, h: usize, w: usize) -> Result<PhantomSample> {
    family.validate()?;
    if !h.is_power_of_two() || !w.is_power_of_two() || h < 16 || w < 16 {
        return Err(Error::Extent(format!("phantom extents must be powers of two >= 16, got {h}x{w}")));
    }
    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
    let (hf, wf) = (h as f64, w as f64);
    let half = 0.5 * wf.min(hf);
    let a = uniform(&mut rng, family.body_size) * half;
    let b = a * uniform(&mut rng, family.aspect);
    let body = Ellipse {
        cx: 0.5 * wf + rng.gen_range(-0.04..0.04) * wf,
        cy: 0.5 * hf + rng.gen_range(-0.04..0.04) * hf,
        a,
        b,
        angle: rng.gen_range(-0.15..0.15),
    };
    let local = |fx: f64, fy: f64| -> (f64, f64) {
        let (s, c) = body.angle.sin_cos();
        let (dx, dy) = (fx * body.a, fy * body.b);
        (body.cx + c * dx - s * dy, body.cy + s * dx + c * dy)
    };

    let mut lungs = Vec::new();
    if rng.gen_bool(0.8) {
        let (la, lb) = (uniform(&mut rng, (0.22, 0.3)) * a, uniform(&mut rng, (0.35, 0.5)) * b);
        for side in [-1.0, 1.0] {
            let (cx, cy) = local(side * uniform(&mut rng, (0.4, 0.5)), -0.1);
            lungs.push(Ellipse { cx, cy, a: la, b: lb, angle: body.angle + side * rng.gen_range(0.0..0.2) });
        }
    }
    let organ = {
        let (cx, cy) = local(rng.gen_range(-0.15..0.15), rng.gen_range(0.05..0.3));
        Ellipse { cx, cy, a: uniform(&mut rng, (0.15, 0.25)) * a, b: uniform(&mut rng, (0.15, 0.25)) * b, angle: 0.0 }
    };
    let mut bones = Vec::new();
    {
        let (cx, cy) = local(0.0, 0.68);
        let r = (0.12 * b).max(1.5);
        bones.push(Ellipse { cx, cy, a: r, b: r, angle: 0.0 });
    }
    let n_ribs = rng.gen_range(6..=10);
    for k in 0..n_ribs {
        let phi = 2.0 * PI * (k as f64 + rng.gen_range(0.0..0.5)) / n_ribs as f64;
        let (cx, cy) = local(0.86 * phi.cos(), 0.86 * phi.sin());
        let r = (0.045 * a).max(1.0);
        bones.push(Ellipse { cx, cy, a: 1.4 * r, b: r, angle: phi + 0.5 * PI });
    }

    let mut labels = vec![BACKGROUND; h * w];
    let mut activity = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            if !body.contains(x, y) {
                continue;
            }
            let p = i * w + j;
            let (label, act) = if bones.iter().any(|e| e.contains(x, y)) {
                (BONE, family.activity_bone)
            } else if lungs.iter().any(|e| e.contains(x, y)) {
                (LUNG, family.activity_lung)
            } else if organ.contains(x, y) {
                (SOFT, family.activity_soft * family.organ_uptake)
            } else {
                (SOFT, family.activity_soft)
            };
            labels[p] = label;
            activity[p] = act;
        }
    }

    let n_lesions = rng.gen_range(0..=family.max_lesions);
    let mut lesion_planes: Vec<Vec<f64>> = Vec::new();
    for _ in 0..n_lesions {
        let (mut fx, mut fy);
        loop {
            fx = rng.gen_range(-0.75..0.75);
            fy = rng.gen_range(-0.75..0.75);
            if fx * fx + fy * fy <= 0.75 * 0.75 {
                break;
            }
        }
        let (cx, cy) = local(fx, fy);
        let r = rng.gen_range(1.5..3.5) * wf / 64.0;
        let contrast = uniform(&mut rng, family.lesion_contrast);
        let les = Ellipse { cx, cy, a: r, b: r, angle: 0.0 };
        let mut plane = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if labels[p] != BACKGROUND && les.contains(j as f64 + 0.5, i as f64 + 0.5) {
                    plane[p] = 1.0;
                    activity[p] = family.activity_soft * contrast;
                }
            }
        }
        if plane.iter().any(|&v| v > 0.0) {
            lesion_planes.push(plane);
        }
    }

    let px_cm = family.fov_cm / wf;
    let mu: Vec<f64> = labels
        .iter()
        .map(|&l| match l {
            SOFT => family.mu_soft * px_cm,
            LUNG => family.mu_lung * px_cm,
            BONE => family.mu_bone * px_cm,
            _ => 0.0,
        })
        .collect();
    let asc = gaussian_blur(&activity, h, w, family.blur_sigma * wf / 64.0);

    let asc = Tensor::new([1, h, w], asc)?;
    let mu = Tensor::new([1, h, w], mu)?;
    let mut noise_rng = rng_from_seed(derive_seed(seed, &[2]));
    let fm = attenuate_and_scatter(&asc, &mu, family, Some(&mut noise_rng))?;
    let body_mask: Vec<bool> = labels.iter().map(|&l| l != BACKGROUND).collect();
    let n_les = lesion_planes.len();
    Ok(PhantomSample {
        asc,
        mu,
        nasc: fm.nasc,
        labels: Tensor::new([1, h, w], labels.iter().map(|&l| f64::from(l)).collect())?,
        lesions: Tensor::new([n_les, h, w], lesion_planes.concat())?,
        depth: depth_map(&body_mask, h, w)?,
        domain: family.name.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn of_index(index: usize) -> Split {
        if index % 10 == 9 {
            Split::Test
        } else {
            Split::Train
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Validation(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub family: String,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub checksum: u32,
}

pub const MANIFEST: &str = "manifest.tsv";
const PARTS: [&str; 6] = ["asc", "mu", "nasc", "labels", "depth", "lesions"];

pub fn sample_seed(seed: u64, family: &str, index: usize) -> u64 {
    derive_seed(seed, &[u64::from(io::adler32(family.as_bytes())), index as u64])
}

fn sample_path(root: &Path, e: &ManifestEntry, part: &str) -> PathBuf {
    root.join(&e.family).join(e.split.as_str()).join(format!("{}.{part}.gpcn", e.index))
}

fn sample_parts(s: &PhantomSample) -> [&Tensor; 6] {
    [&s.asc, &s.mu, &s.nasc, &s.labels, &s.depth, &s.lesions]
}

fn checksum_of(encoded: &[Vec<u8>]) -> u32 {
    io::adler32(&encoded.concat())
}

/// Generates `count` samples per family under `root` and writes the manifest.
/// Index `i` goes to the test split when `i % 10 == 9`.
pub fn make_dataset(
    root: &Path,
    families: &[DomainFamily],
    count: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for fam in families {
        fam.validate()?;
        for split in [Split::Train, Split::Test] {
            fs::create_dir_all(root.join(&fam.name).join(split.as_str()))?;
        }
        for index in 0..count {
            let s = sample_seed(seed, &fam.name, index);
            let sample = generate_phantom(s, fam, h, w)?;
            let encoded: Vec<Vec<u8>> = sample_parts(&sample).iter().map(|t| io::encode_tensor(t)).collect::<Result<_>>()?;
            let entry = ManifestEntry {
                family: fam.name.clone(),
                split: Split::of_index(index),
                index,
                seed: s,
                checksum: checksum_of(&encoded),
            };
            for (part, bytes) in PARTS.iter().zip(&encoded) {
                fs::write(sample_path(root, &entry, part), bytes)?;
            }
            entries.push(entry);
        }
    }
    write_manifest(root, &entries)?;
    Ok(entries)
}

pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from("family\tsplit\tindex\tseed\tchecksum\n");
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\t{}\t{:08x}\n", e.family, e.split.as_str(), e.index, e.seed, e.checksum));
    }
    fs::write(root.join(MANIFEST), out)?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(root.join(MANIFEST))
        .map_err(|e| Error::Validation(format!("cannot read dataset manifest under {}: {e}", root.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Format(format!("{MANIFEST} line {}: malformed row {line:?}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [family, split, index, seed, sum] = cols[..] else { return Err(bad()) };
        out.push(ManifestEntry {
            family: family.to_string(),
            split: Split::parse(split)?,
            index: index.parse().map_err(|_| bad())?,
            seed: seed.parse().map_err(|_| bad())?,
            checksum: u32::from_str_radix(sum, 16).map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Loads one sample and verifies its checksum.
pub fn load_sample(root: &Path, e: &ManifestEntry) -> Result<PhantomSample> {
    let encoded: Vec<Vec<u8>> = PARTS.iter().map(|p| fs::read(sample_path(root, e, p))).collect::<std::io::Result<_>>()?;
    if checksum_of(&encoded) != e.checksum {
        return Err(Error::Format(format!("checksum mismatch for {}/{}/{}", e.family, e.split.as_str(), e.index)));
    }
    let mut t = encoded.iter().map(|b| io::decode_tensor(&mut b.as_slice()));
    let mut next = || t.next().expect("six parts");
    Ok(PhantomSample {
        asc: next()?,
        mu: next()?,
        nasc: next()?,
        labels: next()?,
        depth: next()?,
        lesions: next()?,
        domain: e.family.clone(),
    })
}

/// Loads every sample of `split`, optionally restricted to `families`, in manifest order.
pub fn load_split(root: &Path, split: Split, families: Option<&[String]>) -> Result<Vec<(ManifestEntry, PhantomSample)>> {
    read_manifest(root)?
        .into_iter()
        .filter(|e| e.split == split && families.is_none_or(|f| f.contains(&e.family)))
        .map(|e| {
            let s = load_sample(root, &e)?;
            Ok((e, s))
        })
        .collect()
}
