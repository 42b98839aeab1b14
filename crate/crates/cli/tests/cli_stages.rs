use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use marl_core::nn::Checkpoint;
use marl_core::vq::{VqAutoencoder, VqConfig};
use serde_json::{json, Value};

fn marl(config: &Path, stage: &str, overrides: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_marl"));
    cmd.arg(stage).arg("--config").arg(config);
    for o in overrides {
        cmd.arg("--override").arg(o);
    }
    cmd.output().expect("spawn marl")
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str(line).expect("error is JSON")
}

fn small_config(dir: &Path, extra: Value) -> std::path::PathBuf {
    let mut cfg = json!({
        "paths": { "out": "out" },
        "synth": { "n": 24, "seed": 3 },
        "preprocessing": { "canvas_px": 224, "base_px": 224, "side_px": 56, "height_bounds": { "h_min": 0.0, "h_max": 30.0 } },
        "model": { "side_px": 56, "seed": 3 },
        "training": { "pretrain_epochs": 1, "seed": 3 },
        "clustering": { "components": 8, "seed": 3 }
    });
    if let (Some(base), Value::Object(extra)) = (cfg.as_object_mut(), extra) {
        for (k, v) in extra {
            base.insert(k, v);
        }
    }
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn table_fixture_evaluates_to_reference_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("areas.csv"), "archetype_id,use_class,area_m2\nSFH,SFH,861123.64\nMFH,MFH,1194889.74\n").unwrap();
    fs::write(dir.path().join("eui.csv"), "archetype_id,eui_kwh_per_m2\nSFH,92.5\nMFH,87.0\n").unwrap();
    let cfg = small_config(
        dir.path(),
        json!({ "energy": {
            "eui_source": "external_table",
            "eui_table": "eui.csv",
            "archetype_areas": "areas.csv",
            "ground_truth": 191779982.0,
            "baseline_eui": { "SFH": 75.14, "MFH": 60.79 }
        }}),
    );
    let out = marl(&cfg, "evaluate", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["report"]["accuracy_pct"], json!(95.74));
    assert!((printed["report"]["ec_est_kwh"].as_f64().unwrap() - 183_609_344.0).abs() <= 1.0);
    let written: Value = serde_json::from_slice(&fs::read(dir.path().join("out/evaluate/report.json")).unwrap()).unwrap();
    assert_eq!(written, printed);
    assert_eq!(written["inputs"].as_object().unwrap().len(), 2);
}

#[test]
fn missing_prior_artifact_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = marl(&cfg, "train", &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "stage_dependency");
    assert!(err["error"]["missing"].as_str().unwrap().ends_with("records.geojson"));
}

#[test]
fn bad_config_and_overrides_fail_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = marl(&cfg, "synth", &["model.side_px=112"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "config");
    let out = marl(&cfg, "synth", &["no_equals_sign"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn locked_output_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/.lock"), "1").unwrap();
    let out = marl(&cfg, "synth", &[]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["kind"], "locked");
}

#[test]
fn zero_epochs_without_finetune_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    for stage in ["synth", "ingest"] {
        assert!(marl(&cfg, stage, &[]).status.success());
    }
    let out = marl(&cfg, "train", &["training.pretrain_epochs=0", "training.finetune=false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(dir.path().join("out/train/checkpoint.bin")).unwrap();
    let trained = VqAutoencoder::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
    let init = VqAutoencoder::new(VqConfig { side_px: 56, seed: 3, ..VqConfig::default() }).unwrap();
    let values = |m: &VqAutoencoder| m.params().iter().map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(values(&trained), values(&init));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({ "clustering": { "components": 8, "seed": 3, "k": { "SFH": 3 } } }));
    for stage in ["synth", "ingest", "train", "embed", "cluster", "archetypes", "evaluate", "plot"] {
        let out = marl(&cfg, stage, &[]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        for line in String::from_utf8_lossy(&out.stderr).lines() {
            let v: Value = serde_json::from_str(line).expect("stderr is JSON lines");
            assert_eq!(v["stage"], stage);
        }
    }
    let out = dir.path().join("out");
    for f in [
        "synth/footprints.geojson",
        "ingest/images.bin",
        "train/checkpoint.bin",
        "train/loss_history.csv",
        "embed/latents.bin",
        "cluster/model_SFH.json",
        "cluster/wcss_MFH.csv",
        "archetypes/areas.csv",
        "archetypes/SFH-0.png",
        "archetypes/SFH-0.json",
        "evaluate/report.json",
        "plot/loss.png",
        "plot/wcss_SFH.png",
        "plot/reconstructions.png",
        "plot/latent_scatter.png",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary: Value = serde_json::from_slice(&fs::read(out.join("cluster/summary.json")).unwrap()).unwrap();
    let sources: Vec<&str> = summary["classes"].as_array().unwrap().iter().map(|c| c["k_source"].as_str().unwrap()).collect();
    assert_eq!(sources, ["fixed", "elbow"]);
    assert!(!out.join(".lock").exists());
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.json", "table_fixture/run.json"] {
        marl_cli::RunConfig::load(&root.join(name), &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
