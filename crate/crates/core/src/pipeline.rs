//! Training, checkpointing, evaluation and export built on the library pieces.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fasd;
use crate::io;
use crate::metrics::{self, DepthProfile, ImageMetrics};
use crate::model::{ablation_variant, train_step, GpcnModel, LossBreakdown, ModelConfig, Variant};
use crate::optim::AdamState;
use crate::phantom::{self, ManifestEntry, PhantomSample, Split};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "log.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint-final";
pub const BEST_CHECKPOINT: &str = "checkpoint-best";
pub const MODEL_FILE: &str = "model.toml";

const PARAM_PREFIX: &str = "param.";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_STEP: &str = "adam.step";
const ADAM_LR: &str = "adam.lr";

/// Writes parameters, optimizer state and model config into `dir`.
pub fn save_checkpoint(dir: &Path, model: &GpcnModel, adam: &AdamState) -> Result<()> {
    let mut items = Vec::new();
    for (name, t) in model.store.iter() {
        items.push((format!("{PARAM_PREFIX}{name}"), t.clone()));
    }
    for ((name, _), m) in model.store.iter().zip(&adam.m) {
        items.push((format!("{ADAM_M}{name}"), m.clone()));
    }
    for ((name, _), v) in model.store.iter().zip(&adam.v) {
        items.push((format!("{ADAM_V}{name}"), v.clone()));
    }
    items.push((ADAM_STEP.into(), Tensor::scalar(adam.step as f64)));
    items.push((ADAM_LR.into(), Tensor::scalar(adam.lr)));
    io::write_bundle(dir, &items)?;
    fs::write(dir.join(MODEL_FILE), toml::to_string(&model.config).expect("model config serializes"))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(GpcnModel, AdamState)> {
    let cfg_text = fs::read_to_string(dir.join(MODEL_FILE))
        .map_err(|e| Error::Validation(format!("no checkpoint at {}: {e}", dir.display())))?;
    let config: ModelConfig = toml::from_str(&cfg_text).map_err(|e| Error::Config(e.to_string()))?;
    let mut model = GpcnModel::new(config)?;
    let mut adam = AdamState::new(&model.store, AdamState::DEFAULT_LR);
    let items: BTreeMap<String, Tensor> = io::read_bundle(dir)?.into_iter().collect();
    let fetch = |key: &str, like: &Tensor| -> Result<Tensor> {
        let t = items.get(key).ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
        if t.shape() != like.shape() {
            return Err(Error::Format(format!("checkpoint {key} has shape {:?}, expected {:?}", t.shape(), like.shape())));
        }
        Ok(t.clone())
    };
    let ids: Vec<_> = model.store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let name = model.store.name(id).to_string();
        let p = fetch(&format!("{PARAM_PREFIX}{name}"), model.store.get(id))?;
        adam.m[k] = fetch(&format!("{ADAM_M}{name}"), &p)?;
        adam.v[k] = fetch(&format!("{ADAM_V}{name}"), &p)?;
        *model.store.get_mut(id) = p;
    }
    let scalar = |key: &str| fetch(key, &Tensor::scalar(0.0)).map(|t| t.data()[0]);
    adam.step = scalar(ADAM_STEP)? as u64;
    adam.lr = scalar(ADAM_LR)?;
    Ok((model, adam))
}

/// Training-pool indices of the batch used at `iteration`; depends only on its arguments.
pub fn batch_indices(seed: u64, iteration: usize, pool: usize, batch: usize) -> Vec<usize> {
    let mut rng = rng_from_seed(derive_seed(seed, &[0x6261746368, iteration as u64]));
    (0..batch).map(|_| rng.gen_range(0..pool)).collect()
}

pub fn stack_batch(samples: &[&PhantomSample]) -> Result<(Tensor, Tensor)> {
    let x: Vec<&Tensor> = samples.iter().map(|s| &s.nasc).collect();
    let y: Vec<&Tensor> = samples.iter().map(|s| &s.asc).collect();
    Ok((Tensor::stack(&x)?, Tensor::stack(&y)?))
}

fn check_extent(samples: &[(ManifestEntry, PhantomSample)], cfg: &RunConfig) -> Result<()> {
    for (e, s) in samples {
        if s.extent() != (cfg.data.height, cfg.data.width) {
            return Err(Error::Validation(format!(
                "dataset sample {}/{} is {:?} but the config asks for {}x{}",
                e.family, e.index, s.extent(), cfg.data.height, cfg.data.width
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub iterations: usize,
    pub num_params: usize,
    /// Loss of the last step taken (none when no step ran).
    pub last_loss: Option<LossBreakdown>,
    pub model: GpcnModel,
}

/// Trains per `cfg` on the train split under `data_root`, writing the resolved
/// config, a CSV log and checkpoints under `out`. With `resume`, training
/// continues from that checkpoint's step count.
pub fn train(cfg: &RunConfig, data_root: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let families = cfg.training_families()?;
    let pool = phantom::load_split(data_root, Split::Train, Some(&families))?;
    if pool.is_empty() {
        return Err(Error::Validation(format!("no training samples for {families:?} under {}", data_root.display())));
    }
    check_extent(&pool, cfg)?;
    fs::create_dir_all(out)?;
    cfg.write(&out.join(CONFIG_FILE))?;

    let (mut model, mut adam) = match resume {
        Some(dir) => {
            let (m, a) = load_checkpoint(dir)?;
            if m.config != cfg.model {
                return Err(Error::Validation("checkpoint model config differs from the run config".into()));
            }
            (m, a)
        }
        None => {
            let m = GpcnModel::new(cfg.model.clone())?;
            let a = AdamState::new(&m.store, cfg.train.lr);
            (m, a)
        }
    };
    let start = adam.step as usize;
    log::info!(
        "training {} params on {} samples from {:?}, steps {}..{}",
        model.num_params(),
        pool.len(),
        families,
        start,
        cfg.train.iterations
    );

    let log_path = out.join(LOG_FILE);
    let fresh = resume.is_none() || !log_path.exists();
    let file = OpenOptions::new().create(true).write(true).append(!fresh).truncate(fresh).open(&log_path)?;
    let mut log = csv::Writer::from_writer(file);
    if fresh {
        log.write_record(["iteration", "l_img", "l_freq", "l_total", "imag_ratio", "grad_norm", "batch"])?;
    }

    let mut last = None;
    let (mut window, mut window_n, mut best) = (0.0, 0usize, f64::INFINITY);
    for it in start..cfg.train.iterations {
        let idx = batch_indices(cfg.train.seed, it, pool.len(), cfg.train.batch_size);
        let batch: Vec<&PhantomSample> = idx.iter().map(|&i| &pool[i].1).collect();
        let (x, y) = stack_batch(&batch)?;
        let r = train_step(&mut model, &mut adam, &x, &y)?;
        if !r.loss.l_total.is_finite() {
            return Err(Error::Validation(format!("non-finite loss at iteration {it}")));
        }
        last = Some(r.loss);
        window += r.loss.l_total;
        window_n += 1;
        let done = it + 1 == cfg.train.iterations;
        if it % cfg.train.log_interval == 0 || done {
            let ratio = if r.real_energy > 0.0 { r.imag_energy / r.real_energy } else { 0.0 };
            let batch_ids: Vec<String> =
                idx.iter().map(|&i| format!("{}/{}", pool[i].0.family, pool[i].0.index)).collect();
            log.write_record(&[
                it.to_string(),
                r.loss.l_img.to_string(),
                r.loss.l_freq.to_string(),
                r.loss.l_total.to_string(),
                ratio.to_string(),
                r.grad_norm.to_string(),
                batch_ids.join(";"),
            ])?;
        }
        if (it + 1) % cfg.train.checkpoint_interval == 0 || done {
            let mean = window / window_n as f64;
            if mean < best {
                best = mean;
                save_checkpoint(&out.join(BEST_CHECKPOINT), &model, &adam)?;
            }
            log.flush()?;
            log::info!("iteration {} mean loss {mean:.5}", it + 1);
            window = 0.0;
            window_n = 0;
        }
    }
    log.flush()?;
    save_checkpoint(&out.join(FINAL_CHECKPOINT), &model, &adam)?;
    if !out.join(BEST_CHECKPOINT).exists() {
        save_checkpoint(&out.join(BEST_CHECKPOINT), &model, &adam)?;
    }
    Ok(TrainOutcome { out_dir: out.to_path_buf(), iterations: cfg.train.iterations, num_params: model.num_params(), last_loss: last, model })
}

pub const METHODS: [&str; 2] = ["nasc", "gpcn"];

#[derive(Clone, Debug, PartialEq)]
pub struct LesionRow {
    pub lesion: usize,
    pub method: &'static str,
    pub voi: metrics::VoiStats,
    pub glcm: Option<metrics::GlcmFeatures>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleEval {
    pub family: String,
    pub index: usize,
    /// Indexed like [`METHODS`].
    pub image: [ImageMetrics; 2],
    pub region_bias: [Vec<(&'static str, Option<f64>)>; 2],
    pub lesions: Vec<LesionRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyEval {
    pub family: String,
    pub samples: Vec<SampleEval>,
    /// Pooled over the family's samples, indexed like [`METHODS`].
    pub depth: [DepthProfile; 2],
    pub joint: [metrics::JointHistogram; 2],
}

impl FamilyEval {
    pub fn mean_metric(&self, method: usize, f: impl Fn(&ImageMetrics) -> f64) -> f64 {
        metrics::summarize(&self.samples.iter().map(|s| f(&s.image[method])).collect::<Vec<_>>()).mean
    }

    /// Mean over samples of the per-sample regional bias.
    pub fn mean_region_bias(&self, method: usize, region: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .samples
            .iter()
            .filter_map(|s| s.region_bias[method].iter().find(|(r, _)| *r == region).and_then(|(_, b)| *b))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub families: Vec<FamilyEval>,
}

impl EvalReport {
    /// Mean of a metric over every sample of every family.
    pub fn overall(&self, method: usize, f: impl Fn(&ImageMetrics) -> f64) -> f64 {
        let v: Vec<f64> = self.families.iter().flat_map(|fe| fe.samples.iter().map(|s| f(&s.image[method]))).collect();
        metrics::summarize(&v).mean
    }

    pub fn family(&self, name: &str) -> Option<&FamilyEval> {
        self.families.iter().find(|f| f.family == name)
    }
}

fn lesion_rows(method: &'static str, img: &[f64], s: &PhantomSample, cfg: &RunConfig) -> Result<Vec<LesionRow>> {
    let (h, w) = s.extent();
    s.lesion_masks()
        .iter()
        .enumerate()
        .map(|(k, mask)| {
            let glcm = if cfg.eval.glcm { Some(metrics::glcm_features(img, mask, h, w, cfg.eval.glcm_levels)?) } else { None };
            Ok(LesionRow { lesion: k, method, voi: metrics::voi_stats(img, mask)?, glcm })
        })
        .collect()
}

/// Runs the model over `split` of every listed family (all families in the
/// manifest when `families` is `None`), comparing the NASC input and the model
/// output against ASC.
pub fn evaluate(model: &GpcnModel, data_root: &Path, cfg: &RunConfig, families: Option<&[String]>) -> Result<EvalReport> {
    let split = Split::parse(&cfg.eval.split)?;
    let samples = phantom::load_split(data_root, split, families)?;
    if samples.is_empty() {
        return Err(Error::Validation(format!("no {} samples under {}", split.as_str(), data_root.display())));
    }
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<(ManifestEntry, PhantomSample)>> = BTreeMap::new();
    for (e, s) in samples {
        if !order.contains(&e.family) {
            order.push(e.family.clone());
        }
        grouped.entry(e.family.clone()).or_default().push((e, s));
    }
    let mut out = Vec::new();
    for fam in order {
        let group = &grouped[&fam];
        let mut evals = Vec::new();
        let mut pooled: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let (mut ref_all, mut depth_all, mut mask_all) = (Vec::new(), Vec::new(), Vec::new());
        for (e, s) in group {
            let (h, w) = s.extent();
            let pred = model.predict(&s.nasc.reshape([1, 1, h, w])?)?;
            let outputs = [s.nasc.data(), pred.data()];
            let mask = s.body_mask();
            let mut image = Vec::new();
            let mut bias = Vec::new();
            let mut lesions = lesion_rows("asc", s.asc.data(), s, cfg)?;
            for (m, img) in outputs.iter().enumerate() {
                image.push(metrics::image_metrics(img, s.asc.data(), h, w)?);
                bias.push(metrics::region_bias(img, s.asc.data(), s.labels.data())?);
                if cfg.eval.lesion_metrics {
                    lesions.extend(lesion_rows(METHODS[m], img, s, cfg)?);
                }
                pooled[m].extend_from_slice(img);
            }
            if !cfg.eval.lesion_metrics {
                lesions.clear();
            }
            ref_all.extend_from_slice(s.asc.data());
            depth_all.extend_from_slice(s.depth.data());
            mask_all.extend(mask);
            let [b0, b1]: [_; 2] = bias.try_into().expect("two methods");
            evals.push(SampleEval {
                family: fam.clone(),
                index: e.index,
                image: [image[0], image[1]],
                region_bias: [b0, b1],
                lesions,
            });
        }
        let profile = |m: usize| metrics::depth_error_profile(&pooled[m], &ref_all, &depth_all, &mask_all, cfg.eval.depth_bins);
        let joint = |m: usize| metrics::joint_histogram(&pooled[m], &ref_all, &mask_all, cfg.eval.hist_bins);
        out.push(FamilyEval {
            family: fam.clone(),
            samples: evals,
            depth: [profile(0)?, profile(1)?],
            joint: [joint(0)?, joint(1)?],
        });
    }
    Ok(EvalReport { families: out })
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt)
}

/// Writes `<out>/<family>/{report,summary,depth_profile,region_bias,joint_hist,lesions}.csv`
/// plus an all-family `<out>/summary.csv`.
pub fn write_eval_bundle(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut overall = csv::Writer::from_path(out.join("summary.csv"))?;
    overall.write_record(["family", "method", "metric", "mean", "std", "n"])?;
    let metric_fns: [(&str, fn(&ImageMetrics) -> f64); 4] =
        [("psnr", |m| m.psnr), ("ssim", |m| m.ssim), ("nmae", |m| m.nmae), ("nmse", |m| m.nmse)];
    for fe in &report.families {
        let dir = out.join(&fe.family);
        fs::create_dir_all(&dir)?;

        let mut rep = csv::Writer::from_path(dir.join("report.csv"))?;
        rep.write_record(["family", "index", "method", "metric", "value"])?;
        for s in &fe.samples {
            for (m, method) in METHODS.iter().enumerate() {
                for (name, f) in &metric_fns {
                    rep.write_record([&fe.family, &s.index.to_string(), *method, name, &fmt(f(&s.image[m]))])?;
                }
            }
        }
        rep.flush()?;

        let mut sum = csv::Writer::from_path(dir.join("summary.csv"))?;
        sum.write_record(["family", "method", "metric", "mean", "std", "n"])?;
        for (m, method) in METHODS.iter().enumerate() {
            let mut rows: Vec<(String, metrics::Summary)> = metric_fns
                .iter()
                .map(|(name, f)| {
                    (name.to_string(), metrics::summarize(&fe.samples.iter().map(|s| f(&s.image[m])).collect::<Vec<_>>()))
                })
                .collect();
            let j = &fe.joint[m];
            for (name, v) in [("pearson_r", j.pearson_r), ("rmse", j.rmse)] {
                rows.push((name.into(), metrics::Summary { mean: v, std: 0.0, n: 1, excluded: 0 }));
            }
            for (name, s) in rows {
                let rec = [fe.family.clone(), method.to_string(), name, fmt(s.mean), fmt(s.std), s.n.to_string()];
                sum.write_record(&rec)?;
                overall.write_record(&rec)?;
            }
        }
        sum.flush()?;

        let mut dp = csv::Writer::from_path(dir.join("depth_profile.csv"))?;
        dp.write_record(["family", "method", "bin", "depth_lo", "depth_hi", "mean_rel_err", "variance", "count"])?;
        for (m, method) in METHODS.iter().enumerate() {
            let p = &fe.depth[m];
            for b in 0..p.mean.len() {
                dp.write_record([
                    fe.family.clone(),
                    method.to_string(),
                    b.to_string(),
                    fmt(p.edges[b]),
                    fmt(p.edges[b + 1]),
                    fmt(p.mean[b]),
                    fmt(p.variance[b]),
                    p.count[b].to_string(),
                ])?;
            }
        }
        dp.flush()?;

        let mut rb = csv::Writer::from_path(dir.join("region_bias.csv"))?;
        rb.write_record(["family", "method", "region", "abs_rel_bias_percent"])?;
        for (m, method) in METHODS.iter().enumerate() {
            for (_, region) in phantom::REGION_NAMES {
                rb.write_record([&fe.family, *method, region, &opt(fe.mean_region_bias(m, region))])?;
            }
        }
        rb.flush()?;

        let mut jh = csv::Writer::from_path(dir.join("joint_hist.csv"))?;
        jh.write_record(["family", "method", "ref_bin", "pred_bin", "ref_lo", "pred_lo", "bin_width", "count"])?;
        for (m, method) in METHODS.iter().enumerate() {
            let j = &fe.joint[m];
            let width = (j.hi - j.lo) / j.n_bins as f64;
            for r in 0..j.n_bins {
                for p in 0..j.n_bins {
                    jh.write_record([
                        fe.family.clone(),
                        method.to_string(),
                        r.to_string(),
                        p.to_string(),
                        fmt(j.lo + r as f64 * width),
                        fmt(j.lo + p as f64 * width),
                        fmt(width),
                        j.counts[r * j.n_bins + p].to_string(),
                    ])?;
                }
            }
        }
        jh.flush()?;

        let mut le = csv::Writer::from_path(dir.join("lesions.csv"))?;
        le.write_record([
            "family", "index", "lesion", "method", "suv_max", "suv_mean", "volume", "tlg", "glcm_contrast", "glcm_homogeneity",
        ])?;
        for s in &fe.samples {
            for l in &s.lesions {
                le.write_record([
                    fe.family.clone(),
                    s.index.to_string(),
                    l.lesion.to_string(),
                    l.method.to_string(),
                    fmt(l.voi.suv_max),
                    fmt(l.voi.suv_mean),
                    l.voi.volume.to_string(),
                    fmt(l.voi.tlg),
                    opt(l.glcm.map(|g| g.contrast)),
                    opt(l.glcm.map(|g| g.homogeneity)),
                ])?;
            }
        }
        le.flush()?;
    }
    overall.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    /// `(variant, seed, overall metrics)` per trained model.
    pub runs: Vec<(Variant, u64, ImageMetrics)>,
}

impl AblationResult {
    pub fn mean(&self, v: Variant, f: impl Fn(&ImageMetrics) -> f64) -> f64 {
        let vals: Vec<f64> = self.runs.iter().filter(|r| r.0 == v).map(|r| f(&r.2)).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn overall_metrics(r: &EvalReport, method: usize) -> ImageMetrics {
    ImageMetrics {
        psnr: r.overall(method, |m| m.psnr),
        ssim: r.overall(method, |m| m.ssim),
        nmae: r.overall(method, |m| m.nmae),
        nmse: r.overall(method, |m| m.nmse),
    }
}

/// Trains the full model and both ablations for every configured seed on the
/// same data and batch sequence, then writes `ablation.csv` (means over seeds)
/// and `ablation_runs.csv` (one row per run). Each run lives in its own directory.
pub fn ablate(cfg: &RunConfig, data_root: &Path, out: &Path) -> Result<AblationResult> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    cfg.write(&out.join(CONFIG_FILE))?;
    let families = cfg.training_families()?;
    let mut runs = Vec::new();
    for seed in cfg.ablation_seeds() {
        for v in Variant::ALL {
            let mut c = cfg.clone();
            c.model = ablation_variant(&cfg.model, v);
            c.model.seed = seed;
            c.train.seed = seed;
            let dir = out.join(format!("seed-{seed}")).join(v.slug());
            let trained = train(&c, data_root, &dir, None)?;
            let report = evaluate(&trained.model, data_root, &c, Some(&families))?;
            write_eval_bundle(&report, &dir.join("eval"))?;
            runs.push((v, seed, overall_metrics(&report, 1)));
        }
    }
    let result = AblationResult { runs };
    let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
    w.write_record(["method", "PSNR", "SSIM", "nMAE", "NMSE"])?;
    for v in Variant::ALL {
        w.write_record([
            v.label().to_string(),
            fmt(result.mean(v, |m| m.psnr)),
            fmt(result.mean(v, |m| m.ssim)),
            fmt(result.mean(v, |m| m.nmae)),
            fmt(result.mean(v, |m| m.nmse)),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("ablation_runs.csv"))?;
    w.write_record(["method", "seed", "PSNR", "SSIM", "nMAE", "NMSE"])?;
    for (v, seed, m) in &result.runs {
        w.write_record([v.label().to_string(), seed.to_string(), fmt(m.psnr), fmt(m.ssim), fmt(m.nmae), fmt(m.nmse)])?;
    }
    w.flush()?;
    Ok(result)
}

/// Figure data: the evaluation CSVs plus centered log-amplitude and phase grids
/// of the first evaluated sample of each family (`spectrum.csv`).
pub fn plot_data(model: &GpcnModel, data_root: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = evaluate(model, data_root, cfg, None)?;
    write_eval_bundle(&report, out)?;
    let split = Split::parse(&cfg.eval.split)?;
    let mut w = csv::Writer::from_path(out.join("spectrum.csv"))?;
    w.write_record(["family", "index", "image", "u", "v", "log_amplitude", "phase"])?;
    for fe in &report.families {
        let first = fe.samples[0].index;
        let e = phantom::read_manifest(data_root)?
            .into_iter()
            .find(|e| e.family == fe.family && e.split == split && e.index == first)
            .expect("evaluated sample is in the manifest");
        let s = phantom::load_sample(data_root, &e)?;
        let (h, wd) = s.extent();
        let pred = model.predict(&s.nasc.reshape([1, 1, h, wd])?)?.reshape([h, wd])?;
        for (name, img) in [("nasc", s.nasc.reshape([h, wd])?), ("asc", s.asc.reshape([h, wd])?), ("gpcn", pred)] {
            let (mag, phase) = fasd::log_spectrum_export(&img)?;
            for u in 0..h {
                for v in 0..wd {
                    let k = u * wd + v;
                    w.write_record([
                        fe.family.clone(),
                        first.to_string(),
                        name.to_string(),
                        u.to_string(),
                        v.to_string(),
                        fmt(mag.data()[k]),
                        fmt(phase.data()[k]),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
