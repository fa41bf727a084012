use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gpcn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpcn")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
[model]
stages = 1
channels = 4
state_dim = 2
fasd_hidden = 4

[data]
families = ["siemens-fdg", "siemens-fapi"]
count = 10
height = 16
width = 16

[train]
iterations = 4
checkpoint_interval = 2
log_interval = 1
joint_families = ["siemens-fdg"]

[eval]
depth_bins = 2
hist_bins = 4
"#;

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_creates_directories_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let out = tmp.path().join("nested/dir/data");
    let args = ["gen-data", "--config", "tiny.toml", "--out", out.to_str().unwrap()];
    let first = gpcn(&args, tmp.path());
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(out.join("manifest.tsv").exists());
    assert!(out.join("config.toml").exists());
    let before = read_tree(&out);
    let second = gpcn(&args, tmp.path());
    assert!(second.status.success());
    assert_eq!(before, read_tree(&out));
}

#[test]
fn malformed_config_exits_2_with_a_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[model]\nstages = 1\nchannels = \"eight\"\n").unwrap();
    let o = gpcn(&["gen-data", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(tmp.path().join("unknown.toml"), "[model]\nstagez = 1\n").unwrap();
    let o = gpcn(&["gen-data", "--config", "unknown.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stagez"), "{}", stderr(&o));

    let o = gpcn(&["train"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "missing --out is a usage error");
}

#[test]
fn dose_labels_the_example_table() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let o = gpcn(
        &[
            "dose",
            "--scans",
            configs.join("scans.example.tsv").to_str().unwrap(),
            "--k-table",
            configs.join("k_factors.example.tsv").to_str().unwrap(),
            "--out",
            "dose",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-authoritative"));
    let summary = fs::read_to_string(tmp.path().join("dose/dose_summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("n,mean,median,min,max,k_table"));
    assert!(lines.next().unwrap().ends_with(",non-authoritative"));
    let records = fs::read_to_string(tmp.path().join("dose/dose_records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 4);

    fs::write(tmp.path().join("k.tsv"), "band\tk\nadult\t0.01\n").unwrap();
    fs::write(tmp.path().join("s.tsv"), "ctdi_vol\tscan_length\tage_band\n-3\t40\tadult\n").unwrap();
    let o = gpcn(&["dose", "--scans", "s.tsv", "--k-table", "k.tsv", "--out", "d2"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ctdi_vol"), "{}", stderr(&o));
}

#[test]
fn train_eval_and_plot_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let run = |args: &[&str]| {
        let o = gpcn(args, tmp.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    run(&["gen-data", "--config", "tiny.toml"]);
    run(&["train", "--config", "tiny.toml", "--out", "run"]);
    for f in ["config.toml", "log.csv", "checkpoint-final/model.toml", "checkpoint-best/model.toml"] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
    run(&["eval", "--config", "tiny.toml", "--checkpoint", "run/checkpoint-final", "--out", "eval"]);
    for fam in ["siemens-fdg", "siemens-fapi"] {
        assert!(tmp.path().join("eval").join(fam).join("summary.csv").exists());
    }
    run(&["plot-data", "--config", "tiny.toml", "--checkpoint", "run/checkpoint-final", "--out", "plots", "--split", "train"]);
    assert!(tmp.path().join("plots/spectrum.csv").exists());
    run(&["train", "--config", "tiny.toml", "--out", "single", "--mode", "single"]);

    let o = gpcn(&["train", "--config", "tiny.toml", "--out", "x", "--mode", "sideways"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn user_errors_exit_2_and_runtime_failures_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpcn(&["eval", "--checkpoint", "missing", "--out", "eval"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no checkpoint"));

    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    fs::write(tmp.path().join("blocker"), "a file, not a directory").unwrap();
    let o = gpcn(&["gen-data", "--config", "tiny.toml", "--out", "blocker/data"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("error:"));
}
