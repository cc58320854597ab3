use std::path::Path;
use std::process::{Command, Output};

use popup_core::data::{load_dataset, DataConfig};
use popup_core::io::{write_ply, PlyData, PlyEncoding};
use popup_core::model::{ModelConfig, SaLevel};
use popup_core::training::{RunConfig, TrainConfig};

fn popup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popup"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config() -> RunConfig {
    let data = DataConfig {
        num_sequences: 8,
        frames_per_sequence: 6,
        points_per_frame: 200,
        num_keypoints: 12,
        train_sequences: 4,
        val_sequences: 2,
        test_sequences: 2,
        ..DataConfig::default()
    };
    let model = ModelConfig {
        input_points: 96,
        num_keypoints: 12,
        global_levels: vec![SaLevel::new(24, 8, &[8, 8]), SaLevel::new(8, 4, &[16])],
        global_widths: vec![16],
        center_widths: vec![8],
        local_k: 40,
        local_level: SaLevel::new(12, 6, &[8]),
        local_widths: vec![8],
        decoder_layers: 2,
        decoder_width: 12,
        posenc_bands: 2,
        class_head: true,
        class_widths: vec![8],
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 2,
        lr: 1e-3,
        lr_decay_epochs: vec![],
        warmup_epochs_gt_center: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    RunConfig { data, model, train }
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&popup(&[])), 1);
    assert_eq!(code(&popup(&["train", "--bogus"])), 1);
    assert_eq!(code(&popup(&["eval", "--checkpoint", "x", "--data", "y", "--mode", "sideways"])), 1);
    assert_eq!(code(&popup(&["--help"])), 0);
}

#[test]
fn dump_config_round_trips() {
    for preset in ["full", "desk"] {
        let o = popup(&["--dump-config", "--preset", preset]);
        assert_eq!(code(&o), 0);
        let cfg = RunConfig::from_toml(&stdout(&o)).unwrap();
        let want = if preset == "full" { RunConfig::default() } else { RunConfig::desk() };
        assert_eq!(cfg, want);
    }
}

#[test]
fn shipped_desk_config_matches_the_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::desk());
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = popup(&["train", "--data", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let ck = dir.path().join("bad.ckpt");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let o = popup(&["infer", "--checkpoint", ck.to_str().unwrap(), "--cloud", "x.ply"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.ckpt"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.train.lr = 1e300;
    let config = write_config(dir.path(), &cfg);
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    assert_eq!(code(&popup(&["synth-data", "--config", &config, "--seed", "1", "--out", d])), 0);
    let out = dir.path().join("run");
    let o = popup(&["train", "--config", &config, "--data", d, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("last.ckpt").exists());
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let config = write_config(dir.path(), &cfg);
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();

    let o = popup(&["synth-data", "--config", &config, "--seed", "3", "--out", d]);
    assert_eq!(code(&o), 0);
    assert!(data.join("manifest.json").exists());

    let o = popup(&["train", "--config", &config, "--data", d, "--out", r]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.ckpt", "last.ckpt", "train_log.ndjson"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("model.ckpt");
    let ck = ckpt.to_str().unwrap();

    // test frames as standalone clouds
    let ds = load_dataset(&data).unwrap();
    let id = ds.split_ids(popup_core::data::Split::Test)[0];
    let seq = ds.sequence(id).unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for (i, f) in seq.frames.iter().enumerate() {
        let ply = PlyData {
            points: f.cloud.points().to_vec(),
            ..Default::default()
        };
        write_ply(&frames.join(format!("f{i:03}.ply")), &ply, PlyEncoding::BinaryLittleEndian).unwrap();
    }
    let f0 = frames.join("f000.ply");
    let f0 = f0.to_str().unwrap();
    let class = &ds.manifest.classes[seq.frames[0].gt.unwrap().class_id];

    let out = dir.path().join("infer");
    let o = popup(&["infer", "--checkpoint", ck, "--cloud", f0, "--class", class, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["class_name"], class.as_str());
    for f in ["estimate.json", "estimate.obj", "estimate_keypoints.ply"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let o = popup(&["infer", "--checkpoint", ck, "--cloud", f0]);
    assert_eq!(code(&o), 0);

    let o = popup(&["infer", "--checkpoint", ck, "--cloud", frames.to_str().unwrap(), "--sequence", "--sigma", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), seq.frames.len());
    // one voted class for the whole sequence
    assert!(lines.iter().all(|l| l["class_id"] == lines[0]["class_id"]));

    let o = popup(&["infer", "--checkpoint", ck, "--cloud", f0, "--sequence"]);
    assert_eq!(code(&o), 1);

    let rep = dir.path().join("reports");
    let o = popup(&["eval", "--checkpoint", ck, "--data", d, "--mode", "given-class", "--baseline", "nn", "--out", rep.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("method: popup") && text.contains("method: nn"), "{text}");
    assert!(rep.join("popup_given.json").exists() && rep.join("nn_given.json").exists());

    let o = popup(&["eval", "--checkpoint", ck, "--data", d, "--mode", "predicted-class", "--sequence", "--out", rep.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rep.join("popup-sequence_predicted_confusion.csv").exists());

    let gt = data.join(&ds.manifest.sequences[id].gt_file);
    let sal = dir.path().join("saliency");
    let o = popup(&[
        "saliency", "--checkpoint", ck, "--cloud", f0, "--class", class, "--gt", gt.to_str().unwrap(), "--frame", "0",
        "--iterations", "3", "--out", sal.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("moved 2 points")).count(), 3);
    for f in ["scores.ply", "touched.json", "trace.ndjson"] {
        assert!(sal.join(f).exists(), "{f}");
    }
    // an exported estimate also serves as a pose file
    let est = out.join("estimate.json");
    let o = popup(&[
        "saliency", "--checkpoint", ck, "--cloud", f0, "--class", class, "--gt", est.to_str().unwrap(),
        "--iterations", "1", "--out", sal.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = popup(&["baseline", "--data", d, "--query", f0, "--class", class]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(m["class_name"], class.as_str());
    assert!(m["distance"].as_f64().unwrap() >= 0.0);
}
