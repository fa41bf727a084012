//! Multi-band contextual refinement: a two-level Haar pyramid whose eight
//! subbands are refined by one shared VSS block and merged back progressively.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv, ParamStore, Session};
use crate::ssm::VssBlock;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct MbcrBlock {
    pub entry: Conv,
    pub vss: VssBlock,
    pub channels: usize,
}

impl MbcrBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        expansion: f64,
        state_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            entry: Conv::new(store, &format!("{name}.entry"), channels, channels, 3, rng),
            vss: VssBlock::new(store, &format!("{name}.vss"), channels, expansion, state_dim, rng),
            channels,
        }
    }

    /// Refines every subband of a packed `[4, N, C, h, w]` level with the shared block.
    fn refine_level(&self, s: &mut Session, level: Var) -> Result<Var> {
        let shape = s.tape.shape(level).to_vec();
        let batched = s.tape.reshape(level, &[4 * shape[1], shape[2], shape[3], shape[4]])?;
        let refined = self.vss.forward(s, batched)?;
        s.tape.reshape(refined, &shape)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 4 || !shape[2].is_multiple_of(4) || !shape[3].is_multiple_of(4) {
            return Err(Error::Extent(format!(
                "multi-band refinement needs spatial extents divisible by 4, got {shape:?}"
            )));
        }
        let r = self.entry.forward(s, x)?;
        let level1 = s.tape.haar(r)?;
        let ll1 = s.tape.select0(level1, 0)?;
        let level2 = s.tape.haar(ll1)?;

        let level1_hat = self.refine_level(s, level1)?;
        let level2_hat = self.refine_level(s, level2)?;

        let rec2 = s.tape.inv_haar(level2_hat)?;
        let ll1_hat = s.tape.select0(level1_hat, 0)?;
        let ll1_merged = s.tape.add(rec2, ll1_hat)?;
        let mut bands = vec![ll1_merged];
        for k in 1..4 {
            bands.push(s.tape.select0(level1_hat, k)?);
        }
        let packed = s.tape.stack0(&bands)?;
        let rec1 = s.tape.inv_haar(packed)?;
        s.tape.add(rec1, r)
    }
}

/// Reflect-pads the last two axes up to the next multiple of `m`.
/// Returns the padded tensor and the original `(H, W)`.
pub fn pad_to_multiple(x: &Tensor, m: usize) -> Result<(Tensor, (usize, usize))> {
    let shape = x.shape();
    if shape.len() < 2 || m == 0 {
        return Err(Error::Validation(format!("cannot pad shape {shape:?} to a multiple of {m}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let planes = x.numel() / (h * w);
    let reflect = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else if n == 1 {
            0
        } else {
            let period = 2 * (n - 1);
            let r = i % period;
            if r < n {
                r
            } else {
                period - r
            }
        }
    };
    let mut data = Vec::with_capacity(planes * hp * wp);
    for p in 0..planes {
        for i in 0..hp {
            let si = reflect(i, h);
            for j in 0..wp {
                data.push(x.data()[p * h * w + si * w + reflect(j, w)]);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = hp;
    out_shape[n - 1] = wp;
    Ok((Tensor::new(out_shape, data)?, (h, w)))
}

/// Crops the last two axes back to `original`.
pub fn crop_back(x: &Tensor, original: (usize, usize)) -> Result<Tensor> {
    let shape = x.shape();
    let (hp, wp) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let (h, w) = original;
    if h > hp || w > wp {
        return Err(Error::Validation(format!("cannot crop {hp}x{wp} to {h}x{w}")));
    }
    let planes = x.numel() / (hp * wp);
    let mut data = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        for i in 0..h {
            let row = p * hp * wp + i * wp;
            data.extend_from_slice(&x.data()[row..row + w]);
        }
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = h;
    out_shape[n - 1] = w;
    Tensor::new(out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::transforms::{dwt2, idwt2, SubbandSet};

    fn block(channels: usize, seed: u64) -> (ParamStore, MbcrBlock) {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(seed);
        let b = MbcrBlock::new(&mut store, "mbcr", channels, 2.0, 4, &mut rng);
        (store, b)
    }

    fn run(store: &ParamStore, b: &MbcrBlock, x: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(store, false);
        let xv = s.input(x.clone());
        let y = b.forward(&mut s, xv)?;
        Ok(s.tape.value(y).clone())
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let (store, b) = block(2, 1);
        let y = run(&store, &b, &Tensor::zeros([1, 2, 8, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_refinement_follows_the_merge_equations() {
        let (mut store, b) = block(1, 2);
        b.vss.zero_output_projections(&mut store);
        let w = store.get_mut(b.entry.weight);
        w.data_mut().fill(0.0);
        w.data_mut()[4] = 1.0;
        let x = Tensor::randn([1, 1, 8, 8], 1.0, &mut rng_from_seed(3));
        let y = run(&store, &b, &x).unwrap();
        // With identity refinement: IWT(IWT(WT(LL1)) + LL1, LH1, HL1, HH1) + R
        // = IWT(2 LL1, LH1, HL1, HH1) + R = 2R + IWT(LL1, 0, 0, 0).
        let s1 = dwt2(&x).unwrap();
        let z = Tensor::zeros(s1.ll.shape().to_vec());
        let low = idwt2(&SubbandSet { ll: s1.ll.clone(), lh: z.clone(), hl: z.clone(), hh: z }).unwrap();
        let expected = x.zip_map(&low, |r, l| 2.0 * r + l).unwrap();
        assert!(y.max_abs_diff(&expected) <= 1e-10);
    }

    #[test]
    fn shape_preserved_and_bad_extent_rejected() {
        let (store, b) = block(4, 4);
        let x = Tensor::randn([2, 4, 16, 16], 1.0, &mut rng_from_seed(5));
        assert_eq!(run(&store, &b, &x).unwrap().shape(), &[2, 4, 16, 16]);
        assert!(matches!(run(&store, &b, &Tensor::zeros([1, 4, 6, 8])), Err(Error::Extent(_))));
    }

    #[test]
    fn constant_map_routes_only_to_low_bands() {
        let c = Tensor::full([1, 2, 8, 8], 0.37);
        let s1 = dwt2(&c).unwrap();
        let s2 = dwt2(&s1.ll).unwrap();
        for band in [&s1.lh, &s1.hl, &s1.hh, &s2.lh, &s2.hl, &s2.hh] {
            assert!(band.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pad_noop_and_roundtrip() {
        let x = Tensor::randn([1, 8, 8], 1.0, &mut rng_from_seed(6));
        let (p, orig) = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(p, x);
        assert_eq!(orig, (8, 8));

        let x = Tensor::randn([5, 7], 1.0, &mut rng_from_seed(7));
        let (p, orig) = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(p.shape(), &[8, 8]);
        assert_eq!(crop_back(&p, orig).unwrap(), x);
    }

    #[test]
    fn pad_reflects_a_ramp() {
        let x = Tensor::new([3, 3], (0..9).map(f64::from).collect()).unwrap();
        let (p, _) = pad_to_multiple(&x, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.0, 1.0, 2.0, 1.0,
            3.0, 4.0, 5.0, 4.0,
            6.0, 7.0, 8.0, 7.0,
            3.0, 4.0, 5.0, 4.0,
        ];
        assert_eq!(p.data(), &expected);
    }
}
