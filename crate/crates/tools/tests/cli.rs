use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psr_core::procedure::{EventSequence, Procedure, StepEvent};
use psr_core::simulator::{run_experiment, Pipeline};
use psr_tools::jsonl::{to_jsonl, Schema};
use psr_tools::records::{event_records, AsdRecord, TemporalRecord};
use psr_tools::sim_config::SimConfigFile;

fn psr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psr")).args(args).output().expect("run psr")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_events(path: &Path, video: &str, events: &[(u32, u64)]) {
    let proc = Procedure::meccano();
    let evs = events.iter().map(|&(a, f)| StepEvent::new(&proc.actions()[a as usize], f, true, proc.fps())).collect();
    let seq = EventSequence::new(video, proc.fps(), evs).unwrap();
    fs::write(path, to_jsonl(Schema::Events, &event_records([&seq])).unwrap()).unwrap();
}

fn csv_row(path: &Path, video: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let row = text.lines().find(|l| l.starts_with(&format!("{video},"))).unwrap();
    assert_eq!(header[0], "video_id");
    row.split(',').map(str::to_string).collect()
}

#[test]
fn identical_prediction_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.jsonl");
    write_events(&labels, "v", &[(0, 10), (4, 30), (8, 45)]);
    let out = dir.path().join("eval");
    let o = psr(&["evaluate", "--labels", p(&labels), "--predictions", p(&labels), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "psr.report");
    assert_eq!(report["summary"]["pos"], 1.0);
    assert_eq!(report["summary"]["f1"], 1.0);
    assert_eq!(report["summary"]["tau_s"], 0.0);
}

#[test]
fn composition_fixture_in_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (labels, preds) = (dir.path().join("gt.jsonl"), dir.path().join("pred.jsonl"));
    write_events(&labels, "v", &[(0, 100), (1, 200)]);
    write_events(&preds, "v", &[(0, 120), (2, 150)]);
    let out = dir.path().join("eval");
    let o = psr(&["evaluate", "--labels", p(&labels), "--predictions", p(&preds), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row = csv_row(&out.join("metrics.csv"), "v");
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.5);
    assert_eq!(row[4].parse::<f64>().unwrap(), 0.5);
    assert_eq!(row[5].parse::<f64>().unwrap(), 2.0);
}

#[test]
fn failures_leave_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.jsonl");
    write_events(&labels, "v", &[(0, 10)]);
    let out = dir.path().join("eval");
    let o = psr(&[
        "evaluate",
        "--labels",
        p(&labels),
        "--predictions",
        p(&dir.path().join("missing.jsonl")),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = psr(&["evaluate", "--labels", p(&empty), "--predictions", p(&labels), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());

    let o = psr(&["evaluate", "--labels", p(&labels)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_lines_and_versions() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"video_id\":\"a\",\"frame\":1,\"fps\":10,\"action\":0,\"component\":0,\"kind\":\"install\"}\n\
         {\"video_id\":\"a\",\"frame\":2,\"fps\":10,\"action\":1,\"component\":1,\"kind\":\"installl\"}\n",
    )
    .unwrap();
    let o = psr(&["validate", "--labels", p(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl:2:"));
    let o = psr(&["validate", "--lenient", "--labels", p(&bad)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 events over 1 videos (1 skipped)"));

    let future = dir.path().join("future.jsonl");
    fs::write(&future, "{\"schema\":\"psr.events\",\"version\":\"2.0\"}\n").unwrap();
    let o = psr(&["validate", "--labels", p(&future)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 2.0"));
}

#[test]
fn nominal_asd_stream_recovers_install_order() {
    let proc = Procedure::meccano();
    let dir = tempfile::tempdir().unwrap();
    let asd = dir.path().join("asd.jsonl");
    let records: Vec<AsdRecord> = (0..12u32)
        .map(|s| AsdRecord { video_id: "v".into(), frame: 50 * s as u64, state_id: s, confidence: 0.9 })
        .collect();
    fs::write(&asd, to_jsonl(Schema::AsdStream, &records).unwrap()).unwrap();
    let pred = dir.path().join("pred.jsonl");
    let o = psr(&["recognize", "--streams", &format!("asd:{}", p(&asd)), "--threshold", "0.5", "--out", p(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&pred).unwrap();
    let actions: Vec<u64> = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["action"].as_u64().unwrap())
        .collect();
    assert_eq!(actions, vec![0, 4, 8, 1, 5, 9, 10, 2, 6, 3, 13, 7, 16, 14, 11, 12, 15]);
    assert!(actions.iter().all(|&a| proc.actions()[a as usize].kind == psr_core::StepKind::Install));
}

#[test]
fn silent_streams_predict_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let asd = dir.path().join("asd.jsonl");
    let temporal = dir.path().join("temporal.jsonl");
    let asd_records: Vec<AsdRecord> = vec![AsdRecord { video_id: "v".into(), frame: 3, state_id: 0, confidence: 0.9 }];
    let zeros: Vec<TemporalRecord> =
        (0..20).map(|f| TemporalRecord { video_id: "v".into(), frame: f, probs: vec![0.0; 34] }).collect();
    fs::write(&asd, to_jsonl(Schema::AsdStream, &asd_records).unwrap()).unwrap();
    fs::write(&temporal, to_jsonl(Schema::TemporalStream, &zeros).unwrap()).unwrap();
    let pred = dir.path().join("pred.jsonl");
    let o = psr(&["recognize", "--streams", p(&asd), "--streams", p(&temporal), "--fuse", "--out", p(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&pred).unwrap(), "{\"schema\":\"psr.events\",\"version\":\"1.0\"}\n");

    let o = psr(&["recognize", "--streams", p(&asd), "--streams", p(&temporal), "--out", p(&pred)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn recognize_matches_the_simulated_fused_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("sim.json");
    fs::write(&cfg_path, "{\"seed\": 21, \"n_videos\": 3}").unwrap();
    let out = dir.path().join("sim");
    let o = psr(&["simulate", "--config", p(&cfg_path), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let file = SimConfigFile::load(&cfg_path).unwrap();
    let record = run_experiment(&file.to_sim_config().unwrap(), &file.settings).unwrap();
    let settings = &record.settings;
    let pred = dir.path().join("fused.jsonl");
    let o = psr(&[
        "recognize",
        "--streams",
        p(&out.join("asd.jsonl")),
        "--streams",
        p(&out.join("temporal.jsonl")),
        "--fuse",
        "--threshold",
        &settings.fused_threshold.to_string(),
        "--decay",
        &(1.0 - settings.retention).to_string(),
        "--gate",
        &settings.asd_gate.to_string(),
        "--out",
        p(&pred),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let expected: Vec<&EventSequence> =
        record.pipeline(Pipeline::Fused).videos.iter().map(|v| &v.predictions).collect();
    assert_eq!(fs::read(&pred).unwrap(), to_jsonl(Schema::Events, &event_records(expected)).unwrap());
}

#[test]
fn malformed_sim_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, "{\"temporal\": {\"peak\": \"high\"}}").unwrap();
    let o = psr(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("temporal.peak"));

    fs::write(&cfg, "{\"occlusion\": {\"p_occlude\": 1.0, \"p_reveal\": 0.0}}").unwrap();
    let o = psr(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("occlusion.p_reveal"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn partial_settings_keep_the_other_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, "{\"n_videos\": 1, \"settings\": {\"fused_threshold\": 0.3}}").unwrap();
    let out = dir.path().join("o");
    let o = psr(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(out.join("comparison.json")).unwrap()).unwrap();
    let settings = &doc["settings"];
    assert_eq!(settings["fused_threshold"], 0.3);
    assert_eq!(settings["asd_threshold"], 0.5);
    assert_eq!(settings["asd_gate"], 0.5);
}

#[test]
fn sampling_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, "{\"seed\": 2, \"n_videos\": 2}").unwrap();
    let sim = dir.path().join("sim");
    assert!(psr(&["simulate", "--config", p(&cfg), "--out", p(&sim)]).status.success());
    let labels = sim.join("labels.jsonl");

    let kfs = dir.path().join("kfs.jsonl");
    let o = psr(&["sample", "kfs", "--labels", p(&labels), "--batches", "3", "--seed", "9", "--out", p(&kfs)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> =
        fs::read_to_string(&kfs).unwrap().lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for batch in &lines {
        assert_eq!(batch["spec"]["entries"].as_array().unwrap().len(), 176);
    }

    let kcas = dir.path().join("kcas.jsonl");
    let o = psr(&["sample", "kcas", "--labels", p(&labels), "--draws", "10", "--out", p(&kcas)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let clips: Vec<serde_json::Value> =
        fs::read_to_string(&kcas).unwrap().lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(clips.len(), 20);
    for c in &clips {
        let idx = c["indices"].as_array().unwrap();
        assert_eq!(idx.len(), 64);
        assert_eq!(c["label"].as_str().unwrap().len(), 17);
        assert_eq!(idx.last().unwrap(), &c["end_frame"]);
    }
}
