//! The cascaded dual-domain correction network and its loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fasd::{self, FasdBlock};
use crate::mbcr::MbcrBlock;
use crate::nn::{Conv, ParamStore, Session};
use crate::optim::{adam_step, AdamState};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stages: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub expansion: f64,
    pub wavelet_levels: usize,
    pub lambda_freq: f64,
    pub fasd_hidden: usize,
    pub enable_mbcr: bool,
    pub enable_fasd: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            channels: 16,
            state_dim: 16,
            expansion: 2.0,
            wavelet_levels: 2,
            lambda_freq: 1.0,
            fasd_hidden: fasd::DEFAULT_HIDDEN,
            enable_mbcr: true,
            enable_fasd: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stages == 0 {
            return fail("model.stages must be at least 1".into());
        }
        if self.channels == 0 || self.state_dim == 0 || self.fasd_hidden == 0 {
            return fail("model.channels, model.state_dim and model.fasd_hidden must be positive".into());
        }
        if !(self.expansion.is_finite() && self.expansion > 0.0) {
            return fail(format!("model.expansion must be positive, got {}", self.expansion));
        }
        if self.wavelet_levels != 2 {
            return fail(format!("model.wavelet_levels must be 2, got {}", self.wavelet_levels));
        }
        if !(self.lambda_freq.is_finite() && self.lambda_freq >= 0.0) {
            return fail(format!("model.lambda_freq must be finite and >= 0, got {}", self.lambda_freq));
        }
        if !self.enable_mbcr && !self.enable_fasd {
            return fail("at least one of model.enable_mbcr / model.enable_fasd must be true".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    WithoutMbcr,
    WithoutFasd,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::WithoutMbcr, Variant::WithoutFasd, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "GPCN",
            Variant::WithoutMbcr => "w/o MBCR",
            Variant::WithoutFasd => "w/o FASD",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutMbcr => "wo_mbcr",
            Variant::WithoutFasd => "wo_fasd",
        }
    }
}

pub fn ablation_variant(config: &ModelConfig, which: Variant) -> ModelConfig {
    let mut c = config.clone();
    match which {
        Variant::Full => {
            c.enable_mbcr = true;
            c.enable_fasd = true;
        }
        Variant::WithoutMbcr => c.enable_mbcr = false,
        Variant::WithoutFasd => c.enable_fasd = false,
    }
    c
}

#[derive(Clone, Copy, Debug)]
pub struct Stage {
    pub mbcr: Option<MbcrBlock>,
    pub fuse: Option<Conv>,
    pub fasd: Option<FasdBlock>,
}

#[derive(Clone, Debug)]
pub struct GpcnModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embed: Conv,
    pub stages: Vec<Stage>,
    pub final_conv: Conv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_img: f64,
    pub l_freq: f64,
    pub l_total: f64,
}

/// Forward result with spectral diagnostics summed over stages.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub output: Var,
    pub imag_energy: f64,
    pub real_energy: f64,
}

impl GpcnModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(config.seed, &[0x6d6f64656c]));
        let mut store = ParamStore::new();
        let c = config.channels;
        let embed = Conv::new(&mut store, "embed", 1, c, 3, &mut rng);
        let mut stages = Vec::with_capacity(config.stages);
        for t in 0..config.stages {
            let name = format!("stage{t}");
            let (mbcr, fuse) = if config.enable_mbcr {
                let m = MbcrBlock::new(
                    &mut store,
                    &format!("{name}.mbcr"),
                    c,
                    config.expansion,
                    config.state_dim,
                    &mut rng,
                );
                (Some(m), Some(Conv::zeros(&mut store, &format!("{name}.fuse"), c, 1, 3)))
            } else {
                (None, None)
            };
            let fasd = config
                .enable_fasd
                .then(|| FasdBlock::new(&mut store, &format!("{name}.fasd"), config.fasd_hidden, &mut rng));
            stages.push(Stage { mbcr, fuse, fasd });
        }
        let final_conv = Conv::zeros(&mut store, "final", c, 1, 3);
        let model = Self { config, store, embed, stages, final_conv };
        log::debug!("model built with {} parameters", model.num_params());
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn check_input(shape: &[usize]) -> Result<()> {
        match shape {
            [_, 1, h, w] if h.is_power_of_two() && w.is_power_of_two() && *h >= 16 && *w >= 16 => Ok(()),
            _ => Err(Error::Extent(format!(
                "network input must be [N, 1, H, W] with H, W powers of two >= 16, got {shape:?}"
            ))),
        }
    }

    pub fn forward(&self, s: &mut Session, nasc: Var) -> Result<ForwardOutput> {
        let shape = s.tape.shape(nasc).to_vec();
        Self::check_input(&shape)?;
        let scm = if self.config.enable_fasd {
            let m = fasd::build_scm(shape[2], shape[3])?;
            Some(s.input(fasd::scm_batch(&m, shape[0])?))
        } else {
            None
        };

        let mut x = nasc;
        let mut f = self.embed.forward(s, x)?;
        let (mut imag_energy, mut real_energy) = (0.0, 0.0);
        for stage in &self.stages {
            let mut inc = None;
            if let (Some(mbcr), Some(fuse)) = (&stage.mbcr, &stage.fuse) {
                let refined = mbcr.forward(s, f)?;
                inc = Some(fuse.forward(s, refined)?);
            }
            if let (Some(fasd), Some(scm)) = (&stage.fasd, scm) {
                let out = fasd.forward(s, x, scm)?;
                imag_energy += out.imag_energy;
                real_energy += out.real_energy;
                inc = Some(match inc {
                    Some(m) => s.tape.add(m, out.delta)?,
                    None => out.delta,
                });
            }
            let inc = inc.expect("validated config enables a branch");
            x = s.tape.add(x, inc)?;
            // The increment re-enters the feature stream through the embedding weights.
            let w = s.p(self.embed.weight);
            let lift = s.tape.conv2d(inc, w, None, self.embed.pad)?;
            f = s.tape.add(f, lift)?;
        }
        let head = self.final_conv.forward(s, f)?;
        let output = s.tape.add(x, head)?;
        Ok(ForwardOutput { output, imag_energy, real_energy })
    }

    /// Inference on a plain tensor.
    pub fn predict(&self, nasc: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&self.store, false);
        let x = s.input(nasc.clone());
        let out = self.forward(&mut s, x)?;
        Ok(s.tape.value(out.output).clone())
    }
}

/// Image-domain L1 plus `lambda` times the L1 of the real and imaginary parts of
/// the spectral difference, both mean-reduced (the spectral term over `N*H*W` bins).
pub fn loss(tape: &mut Tape, pred: Var, target: Var, lambda: f64) -> Result<(Var, LossBreakdown)> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Shape(format!(
            "loss operands differ: {:?} vs {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    let diff = tape.sub(pred, target)?;
    let ad = tape.abs(diff);
    let l_img = tape.mean(ad);
    let k = tape.fft2(diff)?;
    let ak = tape.abs(k);
    let mk = tape.mean(ak);
    // mean over 2*N*H*W entries -> per-bin sum of |re| + |im|
    let l_freq = tape.scale(mk, 2.0);
    let weighted = tape.scale(l_freq, lambda);
    let total = tape.add(l_img, weighted)?;
    let b = LossBreakdown {
        l_img: tape.value(l_img).data()[0],
        l_freq: tape.value(l_freq).data()[0],
        l_total: tape.value(total).data()[0],
    };
    Ok((total, b))
}

pub fn loss_values(pred: &Tensor, target: &Tensor, lambda: f64) -> Result<LossBreakdown> {
    let mut t = Tape::new();
    let p = t.constant(pred.clone());
    let q = t.constant(target.clone());
    Ok(loss(&mut t, p, q, lambda)?.1)
}

#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    /// Loss before the update.
    pub loss: LossBreakdown,
    pub imag_energy: f64,
    pub real_energy: f64,
    pub grad_norm: f64,
}

/// Forward, loss, backward and one Adam update on a batch `[N, 1, H, W]`.
pub fn train_step(model: &mut GpcnModel, adam: &mut AdamState, nasc: &Tensor, asc: &Tensor) -> Result<StepReport> {
    let (grads, loss, imag_energy, real_energy) = {
        let mut s = Session::new(&model.store, true);
        let x = s.input(nasc.clone());
        let y = s.input(asc.clone());
        let out = model.forward(&mut s, x)?;
        let (total, loss) = self::loss(&mut s.tape, out.output, y, model.config.lambda_freq)?;
        let g = s.tape.backward(total)?;
        (s.param_grads(&g), loss, out.imag_energy, out.real_energy)
    };
    let grad_norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    adam_step(&mut model.store, &grads, adam)?;
    Ok(StepReport { loss, imag_energy, real_energy, grad_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tiny(seed: u64) -> ModelConfig {
        ModelConfig { stages: 1, channels: 4, state_dim: 4, fasd_hidden: 4, seed, ..ModelConfig::default() }
    }

    #[test]
    fn identity_at_init_is_bitwise() {
        let m = GpcnModel::new(ModelConfig { stages: 2, ..tiny(3) }).unwrap();
        let x = Tensor::uniform([2, 1, 32, 32], 1.0, &mut rng_from_seed(4)).map(f64::abs);
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 32, 32]);
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn both_branches_off_is_rejected() {
        let c = ModelConfig { enable_mbcr: false, enable_fasd: false, ..ModelConfig::default() };
        assert!(matches!(GpcnModel::new(c), Err(Error::Config(_))));
        assert!(ModelConfig { stages: 0, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { lambda_freq: -1.0, ..ModelConfig::default() }.validate().is_err());
    }

    #[test]
    fn ablations_flip_one_flag() {
        let base = ModelConfig::default();
        let a = ablation_variant(&base, Variant::WithoutMbcr);
        assert!(!a.enable_mbcr && a.enable_fasd);
        let b = ablation_variant(&base, Variant::WithoutFasd);
        assert!(b.enable_mbcr && !b.enable_fasd);
        assert_eq!(ablation_variant(&a, Variant::Full), base);
    }

    #[test]
    fn full_model_has_more_parameters() {
        let full = GpcnModel::new(tiny(1)).unwrap().num_params();
        for v in [Variant::WithoutMbcr, Variant::WithoutFasd] {
            let n = GpcnModel::new(ablation_variant(&tiny(1), v)).unwrap().num_params();
            assert!(full > n);
        }
    }

    #[test]
    fn loss_of_constant_offset() {
        let t = Tensor::uniform([2, 1, 8, 8], 1.0, &mut rng_from_seed(5));
        let p = t.map(|v| v + 1.0);
        let b = loss_values(&p, &t, 1.0).unwrap();
        assert!((b.l_img - 1.0).abs() < 1e-12);
        assert!((b.l_freq - 1.0).abs() < 1e-12);
        assert_eq!(b.l_total, b.l_img + b.l_freq);
        let z = loss_values(&t, &t, 1.0).unwrap();
        assert_eq!(z, LossBreakdown::default());
        let l0 = loss_values(&p, &t, 0.0).unwrap();
        assert_eq!(l0.l_total, l0.l_img);
    }

    #[test]
    fn rejects_bad_input_extent() {
        let m = GpcnModel::new(tiny(1)).unwrap();
        assert!(m.predict(&Tensor::zeros([1, 1, 8, 8])).is_err());
        assert!(m.predict(&Tensor::zeros([1, 1, 24, 32])).is_err());
    }
}
