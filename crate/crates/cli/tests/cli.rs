//! End-to-end pipeline runs of the binary with a small configuration,
//! including exit-code checks for the documented failure classes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_eigenprint");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn assert_code(output: &Output, expected: i32) {
    let code = output.status.code().unwrap();
    assert_eq!(
        code,
        expected,
        "expected exit {expected}, got {code}\nstdout: {}\nstderr: {}",
        stdout(output),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_small_config(dir: &Path) {
    let config = r##"{
  "data_dir": "data",
  "out_dir": "out",
  "seed": 3,
  "deterministic": true,
  "gradient_method": "sobel",
  "generator": { "n_per_class": 8, "size": 32 },
  "augment": true,
  "network": {
    "input": { "width": 32, "height": 32, "channels": 1 },
    "layers": [
      { "conv": { "kernel": 3, "filters": 8, "pad": 1, "stride": 1 } },
      { "batch_norm": { "epsilon": 1e-5 } },
      "relu",
      { "max_pool": { "size": 2, "stride": 2 } },
      { "conv": { "kernel": 3, "filters": 8, "pad": 1, "stride": 1 } },
      { "batch_norm": { "epsilon": 1e-5 } },
      "relu",
      { "max_pool": { "size": 2, "stride": 2 } },
      { "conv": { "kernel": 3, "filters": 8, "pad": 1, "stride": 1 } },
      { "batch_norm": { "epsilon": 1e-5 } },
      "relu",
      { "max_pool": { "size": 2, "stride": 2 } },
      { "dropout": { "rate": 0.5 } },
      { "fully_connected": { "outputs": 4 } },
      "softmax"
    ],
    "classes": 4
  },
  "train": {
    "batch_size": 8,
    "learning_rate": 0.05,
    "epochs": 2,
    "val_fraction": 0.3,
    "val_frequency": 5,
    "l2_lambda": 0.0001,
    "dropout_rate": 0.5,
    "seed": 0,
    "deterministic": true
  },
  "fingerprint_relu": 2
}
"##;
    fs::write(dir.join("run.json"), config).unwrap();
}

fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut snapshot = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            snapshot.insert(
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(entry.path()).unwrap(),
            );
        }
    }
    snapshot
}

#[test]
fn full_pipeline_runs_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_small_config(root);

    // gen-data, twice, byte-identical
    let out = run(&["--config", "run.json", "gen-data"], root);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("manifest:"));
    let first = dir_snapshot(&root.join("data"));
    assert_eq!(first.len(), 33); // 32 images + manifest
    let out = run(&["--config", "run.json", "gen-data"], root);
    assert_code(&out, 0);
    assert_eq!(dir_snapshot(&root.join("data")), first);

    // preprocess
    let out = run(&["--config", "run.json", "preprocess"], root);
    assert_code(&out, 0);
    assert!(root.join("out/gradient/manifest.json").exists());
    let derived: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("out/gradient/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(derived["method"], "sobel");

    // stats with mode projection
    let out = run(&["--config", "run.json", "stats", "--modes"], root);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("gradient_order: 3,2,4,1"));
    let report = fs::read_to_string(root.join("out/stats.csv")).unwrap();
    assert!(report.starts_with("image_id,class,mean_intensity,mean_grad,tv\n"));
    assert!(root.join("out/modes.csv").exists());

    // train, full and reduced
    let out = run(&["--config", "run.json", "train"], root);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("final_val_acc:"));
    assert!(root.join("out/checkpoint.mcnn").exists());
    assert!(root.join("out/metrics.csv").exists());
    let metrics = fs::read_to_string(root.join("out/metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap()
        .starts_with("iteration,epoch,train_loss,train_acc,val_loss,val_acc"));

    let out = run(&["--config", "run.json", "train", "--reduced"], root);
    assert_code(&out, 0);
    assert!(root.join("out/checkpoint_reduced.mcnn").exists());

    // stats with activation series appended
    let out = run(
        &["--config", "run.json", "stats", "--checkpoint", "out/checkpoint.mcnn"],
        root,
    );
    assert_code(&out, 0);
    let report = fs::read_to_string(root.join("out/stats.csv")).unwrap();
    assert!(report.contains("# activations: layer"));

    // fingerprint with both methods reports their correlation
    let image = "out/gradient/class3_0000.pgm";
    let out = run(
        &["--config", "run.json", "fingerprint", "--image", image, "--method", "both"],
        root,
    );
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("spectral_gap:"));
    assert!(text.contains("pearson_alpha_eigen:"));
    assert!(root.join("out/fingerprint_class3_0000_eigen.fprt").exists());
    assert!(root.join("out/fingerprint_class3_0000_eigen.pgm").exists());
    assert!(root.join("out/fingerprint_class3_0000_alpha.fprt").exists());

    // fingerprinting twice is idempotent
    let before = fs::read(root.join("out/fingerprint_class3_0000_eigen.fprt")).unwrap();
    let out = run(
        &["--config", "run.json", "fingerprint", "--image", image, "--method", "eigen"],
        root,
    );
    assert_code(&out, 0);
    assert_eq!(fs::read(root.join("out/fingerprint_class3_0000_eigen.fprt")).unwrap(), before);

    // compare a checkpoint against itself
    let out = run(
        &[
            "--config",
            "run.json",
            "compare",
            "out/checkpoint.mcnn",
            "out/checkpoint.mcnn",
            "--image",
            image,
        ],
        root,
    );
    assert_code(&out, 0);
    assert!(stdout(&out).contains("pearson: 1"));

    // compare full against reduced runs end to end
    let out = run(
        &[
            "--config",
            "run.json",
            "compare",
            "out/checkpoint.mcnn",
            "out/checkpoint_reduced.mcnn",
            "--image",
            image,
        ],
        root,
    );
    assert_code(&out, 0);
    assert!(stdout(&out).contains("pearson: "));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_small_config(root);

    // config error: missing config file
    let out = run(&["--config", "absent.json", "gen-data"], root);
    assert_code(&out, 2);

    // usage error from the argument parser
    let out = run(&["--config", "run.json", "bogus-command"], root);
    assert_code(&out, 2);

    // config error: rejected fingerprint method
    let out = run(
        &["--config", "run.json", "fingerprint", "--image", "x.pgm", "--method", "typo"],
        root,
    );
    assert_code(&out, 2);

    // data error: preprocess without a dataset
    let out = run(&["--config", "run.json", "preprocess"], root);
    assert_code(&out, 3);

    // data error: corrupt checkpoint
    fs::create_dir_all(root.join("out")).unwrap();
    fs::write(root.join("out/checkpoint.mcnn"), b"MCNNgarbage").unwrap();
    fs::write(
        root.join("img.pgm"),
        {
            let mut v = b"P5\n8 8\n255\n".to_vec();
            v.extend((0u8..64).map(|i| i * 3));
            v
        },
    )
    .unwrap();
    let out = run(
        &["--config", "run.json", "fingerprint", "--image", "img.pgm", "--method", "eigen"],
        root,
    );
    assert_code(&out, 3);

    // numeric error: constant image cannot be normalized for fingerprinting
    let trained = TempDir::new().unwrap();
    let _ = trained; // placeholder: numeric path covered below without training

    // gen-data with a miscalibrated generator that breaks the ordering
    let bad = r##"{
  "data_dir": "data",
  "out_dir": "out",
  "seed": 3,
  "generator": {
    "n_per_class": 6,
    "size": 32,
    "specs": [
      { "label": 1, "correlation_length": 5, "amplitude": 20.0, "base_level": 128.0 },
      { "label": 2, "correlation_length": 5, "amplitude": 20.0, "base_level": 128.0 },
      { "label": 3, "correlation_length": 5, "amplitude": 20.0, "base_level": 128.0 },
      { "label": 4, "correlation_length": 5, "amplitude": 20.0, "base_level": 128.0 }
    ]
  }
}
"##;
    fs::write(root.join("bad.json"), bad).unwrap();
    let out = run(&["--config", "bad.json", "gen-data"], root);
    assert_code(&out, 4);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_small_config(root);

    let out = run(&["--config", "run.json", "--seed", "9", "gen-data"], root);
    assert_code(&out, 0);
    let with_nine = dir_snapshot(&root.join("data"));

    let out = run(&["--config", "run.json", "gen-data"], root);
    assert_code(&out, 0);
    let with_config_seed = dir_snapshot(&root.join("data"));
    assert_ne!(with_nine, with_config_seed);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("data/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 3);
}
