//! Slow, direct reference computations used to cross-check the library.

#![allow(dead_code)]

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn psnr(p: &[f64], r: &[f64]) -> f64 {
    let peak = r.iter().copied().fold(f64::MIN, f64::max);
    let mse = mean(&p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).collect::<Vec<_>>());
    10.0 * (peak * peak / mse).log10()
}

/// Mean SSIM from an explicit 11x11 Gaussian window at every valid position,
/// with moments computed in two passes per window.
pub fn ssim(x: &[f64], y: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let n = 11;
    let g: Vec<f64> = (0..n).map(|k| (-((k as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut win = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            win[a * n + b] = g[a] * g[b];
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..=h - n {
        for j in 0..=w - n {
            let at = |img: &[f64], a: usize, b: usize| img[(i + a) * w + j + b];
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    mx += win[a * n + b] * at(x, a, b);
                    my += win[a * n + b] * at(y, a, b);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let (dx, dy) = (at(x, a, b) - mx, at(y, a, b) - my);
                    vx += win[a * n + b] * dx * dx;
                    vy += win[a * n + b] * dy * dy;
                    cxy += win[a * n + b] * dx * dy;
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn nmae(p: &[f64], r: &[f64]) -> f64 {
    let num: f64 = p.iter().zip(r).map(|(a, b)| (a - b).abs()).sum();
    100.0 * num / r.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn nmse(p: &[f64], r: &[f64]) -> f64 {
    let num: f64 = p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
    num / r.iter().map(|v| v * v).sum::<f64>()
}

/// Textbook two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Co-occurrence matrix by enumerating every ordered pixel pair that are
/// horizontal or vertical neighbours, both inside the mask.
pub fn glcm(img: &[f64], mask: &[bool], h: usize, w: usize, levels: usize) -> Vec<f64> {
    let inside: Vec<usize> = (0..h * w).filter(|&k| mask[k]).collect();
    let lo = inside.iter().map(|&k| img[k]).fold(f64::INFINITY, f64::min);
    let hi = inside.iter().map(|&k| img[k]).fold(f64::NEG_INFINITY, f64::max);
    let quant = |v: f64| {
        if hi == lo {
            return 0;
        }
        let q = ((v - lo) / (hi - lo) * levels as f64).floor() as usize;
        q.min(levels - 1)
    };
    let mut m = vec![0.0; levels * levels];
    for &p in &inside {
        for &q in &inside {
            let (pi, pj, qi, qj) = (p / w, p % w, q / w, q % w);
            if pi.abs_diff(qi) + pj.abs_diff(qj) == 1 {
                m[quant(img[p]) * levels + quant(img[q])] += 1.0;
            }
        }
    }
    let total: f64 = m.iter().sum();
    m.iter().map(|v| v / total).collect()
}

pub fn glcm_contrast_homogeneity(p: &[f64], levels: usize) -> (f64, f64) {
    let (mut c, mut hm) = (0.0, 0.0);
    for a in 0..levels {
        for b in 0..levels {
            let d = (a as f64 - b as f64).abs();
            c += p[a * levels + b] * d * d;
            hm += p[a * levels + b] / (1.0 + d);
        }
    }
    (c, hm)
}

/// Naive 2-D DFT of a real `[h, w]` plane: `(re, im)` with the DC bin at the origin.
pub fn dft2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut re, mut im) = (vec![0.0; h * w], vec![0.0; h * w]);
    for u in 0..h {
        for v in 0..w {
            for i in 0..h {
                for j in 0..w {
                    let ang = -2.0 * std::f64::consts::PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    re[u * w + v] += x[i * w + j] * ang.cos();
                    im[u * w + v] += x[i * w + j] * ang.sin();
                }
            }
        }
    }
    (re, im)
}

/// All-pairs Euclidean distance from each body pixel to the nearest
/// non-body pixel of the grid padded by a one-pixel background ring, minus one.
pub fn depth(body: &[bool], h: usize, w: usize) -> Vec<f64> {
    let inside = |i: isize, j: isize| i >= 0 && j >= 0 && i < h as isize && j < w as isize && body[i as usize * w + j as usize];
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            if !inside(i, j) {
                continue;
            }
            let mut best = f64::INFINITY;
            for a in -1..=h as isize {
                for b in -1..=w as isize {
                    if !inside(a, b) {
                        best = best.min((((a - i).pow(2) + (b - j).pow(2)) as f64).sqrt());
                    }
                }
            }
            out[i as usize * w + j as usize] = best - 1.0;
        }
    }
    out
}
