mod common;

use common::{assert_same_tree, oracles};
use gpcn::metrics::spearman;
use gpcn::phantom::{
    self, attenuate_and_scatter, depth_map, families, family, generate_phantom, survival, DomainFamily, Split,
    SOFT, TRAIN_FAMILY,
};
use gpcn::rng::rng_from_seed;
use gpcn::Tensor;
use rand::Rng;

/// Survival at `(i, j)` by marching eight rays with a fine step, sampling the
/// pixel under each point.
fn fine_survival(mu: &[f64], h: usize, w: usize, i: usize, j: usize, step: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..8 {
        let ang = k as f64 * std::f64::consts::FRAC_PI_4;
        let (dx, dy) = (ang.cos(), ang.sin());
        let (x0, y0) = (j as f64 + 0.5, i as f64 + 0.5);
        let mut integral = 0.0;
        let mut t = 0.5 * step;
        loop {
            let (x, y) = (x0 + t * dx, y0 + t * dy);
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                break;
            }
            integral += mu[y.floor() as usize * w + x.floor() as usize] * step;
            t += step;
        }
        total += (-integral).exp();
    }
    total / 8.0
}

fn disk(h: usize, w: usize, r: f64, value: f64) -> Vec<f64> {
    let (ci, cj) = (h / 2, w / 2);
    (0..h * w)
        .map(|p| {
            let (di, dj) = ((p / w) as f64 - ci as f64, (p % w) as f64 - cj as f64);
            if (di * di + dj * dj).sqrt() <= r {
                value
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn disk_center_survival_matches_fine_step_marching() {
    let (h, w, r) = (64, 64, 20.5);
    for mu_px in [0.01, 0.03, 0.06] {
        let mu = disk(h, w, r, mu_px);
        let s = survival(&mu, h, w).unwrap();
        let got = s[(h / 2) * w + w / 2];
        let oracle = fine_survival(&mu, h, w, h / 2, w / 2, 0.05);
        assert!((got - oracle).abs() / oracle <= 1e-3, "mu {mu_px}: {got} vs {oracle}");
        // Every ray crosses roughly one radius of attenuating material.
        assert!((got - (-mu_px * r).exp()).abs() / got < 0.05);
    }
}

#[test]
fn survival_bounds_and_zero_attenuation() {
    let mut rng = rng_from_seed(1);
    let (h, w) = (16, 16);
    let mut mu: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..0.2)).collect();
    let s = survival(&mu, h, w).unwrap();
    assert!(s.iter().all(|&v| v > 0.0 && v <= 1.0));
    mu.iter_mut().for_each(|v| *v = 0.0);
    assert!(survival(&mu, h, w).unwrap().iter().all(|&v| v == 1.0));
    mu[5] = -0.1;
    assert!(survival(&mu, h, w).is_err());
}

#[test]
fn survival_is_monotone_in_attenuation_scale() {
    let fam = family(TRAIN_FAMILY).unwrap();
    for seed in 0..4 {
        let p = generate_phantom(seed, &fam, 32, 32).unwrap();
        let s1 = survival(p.mu.data(), 32, 32).unwrap();
        for alpha in [1.3, 2.0] {
            let scaled: Vec<f64> = p.mu.data().iter().map(|v| alpha * v).collect();
            let s2 = survival(&scaled, 32, 32).unwrap();
            assert!(s2.iter().zip(&s1).all(|(a, b)| a <= b));
        }
    }
}

#[test]
fn zero_scatter_and_zero_attenuation_reproduce_activity() {
    let fam = DomainFamily { scatter_fraction: 0.0, ..family(TRAIN_FAMILY).unwrap() };
    let asc = Tensor::uniform([1, 16, 16], 1.0, &mut rng_from_seed(2)).map(f64::abs);
    let fm = attenuate_and_scatter(&asc, &Tensor::zeros([1, 16, 16]), &fam, None).unwrap();
    assert_eq!(fm.nasc, asc);
}

#[test]
fn forward_model_invariants_on_generated_phantoms() {
    for fam in families() {
        for seed in 0..3 {
            let p = generate_phantom(seed, &fam, 64, 64).unwrap();
            let fm = attenuate_and_scatter(&p.asc, &p.mu, &fam, None).unwrap();
            for k in 0..64 * 64 {
                assert!(fm.nasc.data()[k] >= 0.0);
                assert!(fm.primary.data()[k] <= p.asc.data()[k] + 1e-15);
                assert!(fm.nasc.data()[k] <= p.asc.data()[k] + fm.scatter.data()[k] + 1e-12);
            }
            assert!(p.nasc.data().iter().all(|&v| v >= 0.0));
            let body = p.body_mask();
            for l in p.labels.data() {
                assert!([0.0, 1.0, 2.0, 3.0].contains(l));
            }
            for m in p.lesion_masks() {
                assert!(m.iter().zip(&body).all(|(&l, &b)| !l || b));
            }
            assert!(p.depth.data().iter().zip(&body).all(|(&d, &b)| if b { d >= 0.0 } else { d == 0.0 }));
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let fam = family("sinounion-mfbg").unwrap();
    assert_eq!(generate_phantom(9, &fam, 32, 32).unwrap(), generate_phantom(9, &fam, 32, 32).unwrap());
    assert_ne!(generate_phantom(9, &fam, 32, 32).unwrap(), generate_phantom(10, &fam, 32, 32).unwrap());
}

/// Deeper soft-tissue pixels lose more primary counts.
#[test]
fn attenuation_loss_rises_with_depth() {
    for fam in families() {
        for seed in 0..5 {
            let p = generate_phantom(100 + seed, &fam, 64, 64).unwrap();
            let fm = attenuate_and_scatter(&p.asc, &p.mu, &fam, None).unwrap();
            let (mut d, mut loss) = (Vec::new(), Vec::new());
            for k in 0..64 * 64 {
                if p.labels.data()[k] == f64::from(SOFT) && p.asc.data()[k] > 0.0 {
                    d.push(p.depth.data()[k]);
                    loss.push((p.asc.data()[k] - fm.primary.data()[k]) / p.asc.data()[k]);
                }
            }
            let rho = spearman(&d, &loss).unwrap();
            assert!(rho > 0.5, "{} seed {seed}: spearman {rho}", fam.name);
        }
    }
}

/// Same-size disks filled with a single tissue: denser tissue loses more.
#[test]
fn region_ordering_on_constructed_disks() {
    let fam = family(TRAIN_FAMILY).unwrap();
    let px = fam.fov_cm / 64.0;
    let mean_loss = |mu_cm: f64| {
        let mu = disk(64, 64, 20.0, mu_cm * px);
        let s = survival(&mu, 64, 64).unwrap();
        let inside: Vec<f64> = s.iter().zip(&mu).filter(|(_, &m)| m > 0.0).map(|(v, _)| 1.0 - v).collect();
        inside.iter().sum::<f64>() / inside.len() as f64
    };
    let (bone, soft, lung) = (mean_loss(fam.mu_bone), mean_loss(fam.mu_soft), mean_loss(fam.mu_lung));
    assert!(bone > soft && soft > lung, "{bone} {soft} {lung}");
}

#[test]
fn depth_matches_brute_force() {
    let solid = vec![true; 25];
    assert_eq!(depth_map(&solid, 5, 5).unwrap().data(), &oracles::depth(&solid, 5, 5)[..]);
    assert_eq!(depth_map(&solid, 5, 5).unwrap().data()[12], 2.0);
    let mut rng = rng_from_seed(4);
    for _ in 0..20 {
        let (h, w) = (rng.gen_range(3..12), rng.gen_range(3..12));
        let body: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.7)).collect();
        let got = depth_map(&body, h, w).unwrap();
        let want = oracles::depth(&body, h, w);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn surface_pixels_have_small_depth() {
    let fam = family(TRAIN_FAMILY).unwrap();
    let p = generate_phantom(5, &fam, 64, 64).unwrap();
    let body = p.body_mask();
    let at = |i: isize, j: isize| i >= 0 && j >= 0 && i < 64 && j < 64 && body[(i * 64 + j) as usize];
    for i in 0..64isize {
        for j in 0..64isize {
            if !at(i, j) {
                continue;
            }
            let d = p.depth.data()[(i * 64 + j) as usize];
            let edge = !at(i - 1, j) || !at(i + 1, j) || !at(i, j - 1) || !at(i, j + 1);
            let corner = !at(i - 1, j - 1) || !at(i - 1, j + 1) || !at(i + 1, j - 1) || !at(i + 1, j + 1);
            if edge {
                assert_eq!(d, 0.0);
            } else if corner {
                assert!(d <= 2f64.sqrt());
            }
        }
    }
    assert_eq!(depth_map(&[true], 1, 1).unwrap().data(), &[0.0]);
}

#[test]
fn dataset_split_and_regeneration() {
    let fams: Vec<DomainFamily> = families().into_iter().take(2).collect();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ea = phantom::make_dataset(a.path(), &fams, 20, 16, 16, 11).unwrap();
    let eb = phantom::make_dataset(b.path(), &fams, 20, 16, 16, 11).unwrap();
    assert_eq!(ea, eb);
    assert_same_tree(a.path(), b.path());
    for fam in &fams {
        let mine: Vec<_> = ea.iter().filter(|e| e.family == fam.name).collect();
        let train: Vec<usize> = mine.iter().filter(|e| e.split == Split::Train).map(|e| e.index).collect();
        let test: Vec<usize> = mine.iter().filter(|e| e.split == Split::Test).map(|e| e.index).collect();
        assert_eq!((train.len(), test.len()), (18, 2));
        assert!(train.iter().all(|i| !test.contains(i)));
    }
    assert_eq!(phantom::read_manifest(a.path()).unwrap(), ea);
    let loaded = phantom::load_split(a.path(), Split::Test, None).unwrap();
    assert_eq!(loaded.len(), 4);
    let direct = generate_phantom(loaded[0].0.seed, &fams[0], 16, 16).unwrap();
    assert_eq!(loaded[0].1, direct);

    // A flipped byte is caught by the manifest checksum.
    let e = &ea[0];
    let path = a.path().join(&e.family).join(e.split.as_str()).join(format!("{}.asc.gpcn", e.index));
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(phantom::load_sample(a.path(), e).is_err());
}
