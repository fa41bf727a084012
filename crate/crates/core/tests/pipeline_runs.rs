mod common;

use std::fs;
use std::path::Path;

use common::assert_same_tree;
use gpcn::config::{RunConfig, TrainMode};
use gpcn::model::{GpcnModel, ModelConfig};
use gpcn::phantom::{self, Split};
use gpcn::pipeline::{self, BEST_CHECKPOINT, FINAL_CHECKPOINT, LOG_FILE};

const FAMS: [&str; 2] = ["siemens-fdg", "sinounion-fdg"];

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model = ModelConfig { stages: 1, channels: 4, state_dim: 2, fasd_hidden: 4, ..ModelConfig::default() };
    c.data.families = FAMS.iter().map(|s| s.to_string()).collect();
    c.data.count = 10;
    c.data.height = 16;
    c.data.width = 16;
    c.train.iterations = 6;
    c.train.checkpoint_interval = 3;
    c.train.log_interval = 1;
    c.train.joint_families = c.data.families.clone();
    c.eval.depth_bins = 3;
    c.eval.hist_bins = 8;
    c
}

fn dataset(dir: &Path, cfg: &RunConfig) {
    phantom::make_dataset(dir, &cfg.data_families().unwrap(), cfg.data.count, cfg.data.height, cfg.data.width, cfg.data.seed)
        .unwrap();
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn zero_iterations_keep_the_identity_and_match_the_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.train.iterations = 0;
    let data = tmp.path().join("data");
    dataset(&data, &cfg);
    let out = pipeline::train(&cfg, &data, &tmp.path().join("run"), None).unwrap();
    assert!(out.last_loss.is_none());
    let (loaded, adam) = pipeline::load_checkpoint(&tmp.path().join("run").join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(loaded.store.iter().collect::<Vec<_>>(), GpcnModel::new(cfg.model.clone()).unwrap().store.iter().collect::<Vec<_>>());
    assert_eq!(adam.step, 0);

    let report = pipeline::evaluate(&loaded, &data, &cfg, None).unwrap();
    for fe in &report.families {
        for s in &fe.samples {
            assert_eq!(s.image[0], s.image[1]);
            assert_eq!(s.region_bias[0], s.region_bias[1]);
        }
        assert_eq!(fe.depth[0], fe.depth[1]);
    }
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = tmp.path().join("data");
    dataset(&data, &cfg);
    pipeline::train(&cfg, &data, &tmp.path().join("full"), None).unwrap();

    let mut first = cfg.clone();
    first.train.iterations = 3;
    pipeline::train(&first, &data, &tmp.path().join("split"), None).unwrap();
    let ckpt = tmp.path().join("split").join(FINAL_CHECKPOINT);
    pipeline::train(&cfg, &data, &tmp.path().join("split"), Some(&ckpt)).unwrap();

    assert_same_tree(&tmp.path().join("full").join(FINAL_CHECKPOINT), &tmp.path().join("split").join(FINAL_CHECKPOINT));
    let (_, full) = csv_rows(&tmp.path().join("full").join(LOG_FILE));
    let (_, split) = csv_rows(&tmp.path().join("split").join(LOG_FILE));
    assert_eq!(full, split);
    assert_eq!(full.len(), 6);
}

#[test]
fn training_rejects_mismatched_extent_and_missing_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = tmp.path().join("data");
    dataset(&data, &cfg);
    let mut wide = cfg.clone();
    wide.data.width = 32;
    let e = pipeline::train(&wide, &data, &tmp.path().join("run"), None).unwrap_err();
    assert!(e.is_validation(), "{e}");
    assert!(pipeline::train(&cfg, &tmp.path().join("nothing"), &tmp.path().join("run2"), None).is_err());
}

#[test]
fn modes_draw_from_the_expected_families() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.train.iterations = 30;
    let data = tmp.path().join("data");
    dataset(&data, &cfg);
    let families_in_log = |dir: &Path| {
        let (header, rows) = csv_rows(&dir.join(LOG_FILE));
        assert_eq!(header, ["iteration", "l_img", "l_freq", "l_total", "imag_ratio", "grad_norm", "batch"]);
        let mut seen: Vec<String> = rows
            .iter()
            .flat_map(|r| r[6].split(';').map(|b| b.split('/').next().unwrap().to_string()).collect::<Vec<_>>())
            .collect();
        seen.sort();
        seen.dedup();
        seen
    };
    pipeline::train(&cfg, &data, &tmp.path().join("joint"), None).unwrap();
    assert_eq!(families_in_log(&tmp.path().join("joint")), FAMS);
    cfg.train.mode = TrainMode::Single;
    cfg.train.single_family = FAMS[1].into();
    pipeline::train(&cfg, &data, &tmp.path().join("single"), None).unwrap();
    assert_eq!(families_in_log(&tmp.path().join("single")), [FAMS[1]]);
    let written = RunConfig::load(&tmp.path().join("single").join(pipeline::CONFIG_FILE)).unwrap();
    assert_eq!(written, cfg);
    assert!(tmp.path().join("single").join(BEST_CHECKPOINT).join(pipeline::MODEL_FILE).exists());
}

#[test]
fn eval_bundle_covers_the_test_manifest_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = tmp.path().join("data");
    dataset(&data, &cfg);
    let trained = pipeline::train(&cfg, &data, &tmp.path().join("run"), None).unwrap();
    for name in ["a", "b"] {
        let report = pipeline::evaluate(&trained.model, &data, &cfg, None).unwrap();
        pipeline::write_eval_bundle(&report, &tmp.path().join(name)).unwrap();
    }
    assert_same_tree(&tmp.path().join("a"), &tmp.path().join("b"));

    let manifest = phantom::read_manifest(&data).unwrap();
    for fam in FAMS {
        let dir = tmp.path().join("a").join(fam);
        let (header, rows) = csv_rows(&dir.join("report.csv"));
        assert_eq!(header, ["family", "index", "method", "metric", "value"]);
        let mut idx: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
        idx.dedup();
        let want: Vec<usize> =
            manifest.iter().filter(|e| e.family == fam && e.split == Split::Test).map(|e| e.index).collect();
        assert_eq!(idx, want);
        for f in ["summary.csv", "depth_profile.csv", "region_bias.csv", "joint_hist.csv", "lesions.csv"] {
            let (h, _) = csv_rows(&dir.join(f));
            assert!(!h.is_empty(), "{f}");
        }
    }
}

#[test]
fn ablation_table_layout_and_shared_batches() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.train.iterations = 4;
    let data = tmp.path().join("data");
    dataset(&data, &cfg);
    let out = tmp.path().join("ablate");
    let result = pipeline::ablate(&cfg, &data, &out).unwrap();
    assert_eq!(result.runs.len(), 3);
    let (header, rows) = csv_rows(&out.join("ablation.csv"));
    assert_eq!(header, ["method", "PSNR", "SSIM", "nMAE", "NMSE"]);
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["w/o MBCR", "w/o FASD", "GPCN"]);
    let batches = |slug: &str| -> Vec<String> {
        csv_rows(&out.join("seed-0").join(slug).join(LOG_FILE)).1.into_iter().map(|r| r[6].clone()).collect()
    };
    assert_eq!(batches("full"), batches("wo_mbcr"));
    assert_eq!(batches("full"), batches("wo_fasd"));
}

#[test]
fn plot_data_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = tmp.path().join("data");
    dataset(&data, &cfg);
    let model = GpcnModel::new(cfg.model.clone()).unwrap();
    let out = tmp.path().join("plots");
    pipeline::plot_data(&model, &data, &cfg, &out).unwrap();
    let (header, rows) = csv_rows(&out.join("spectrum.csv"));
    assert_eq!(header, ["family", "index", "image", "u", "v", "log_amplitude", "phase"]);
    assert_eq!(rows.len(), FAMS.len() * 3 * 16 * 16);

    let test = phantom::load_split(&data, Split::Test, Some(&[FAMS[0].to_string()])).unwrap();
    let max_depth = test
        .iter()
        .flat_map(|(_, s)| s.depth.data().iter().zip(s.asc.data()).zip(s.body_mask()).filter(|((_, a), m)| *m && **a >= 1e-6).map(|((d, _), _)| *d).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let (_, depth_rows) = csv_rows(&out.join(FAMS[0]).join("depth_profile.csv"));
    let lo: f64 = depth_rows[0][3].parse().unwrap();
    let hi: f64 = depth_rows[cfg.eval.depth_bins - 1][4].parse().unwrap();
    assert_eq!((lo, hi), (0.0, max_depth));
    for f in ["region_bias.csv", "joint_hist.csv"] {
        assert!(fs::metadata(out.join(FAMS[0]).join(f)).unwrap().len() > 0);
    }
}
