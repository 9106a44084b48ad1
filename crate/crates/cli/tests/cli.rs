mod common;

use std::collections::HashSet;

use common::*;
use serde_json::json;
use uafuse::data::{read_nifti, write_case, write_nifti, Grid, NiftiData, NiftiImage};

fn small_spec(dims: usize) -> serde_json::Value {
    let mut spec = serde_json::to_value(uafuse::data::PhantomSpec::default()).unwrap();
    spec["dims"] = json!([dims, dims, dims]);
    spec
}

fn tiny_train_config() -> serde_json::Value {
    json!({
        "network": {"width": 8, "adapt_width": 4, "aspp_growth": 4, "dilations": [1, 2], "min_spatial": 8},
        "stage_switch_epoch": 1,
        "total_epochs": 2,
        "steps_per_epoch": 2,
        "patch_size": [12, 12, 12],
        "stride": [6, 6, 6],
        "validate_every": 1,
        "seed": 4,
        "train_cases": ["case_0"],
        "val_cases": ["case_1"]
    })
}

#[test]
fn gen_synth_is_byte_deterministic_and_labels_cover_all_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(&tmp.path().join("spec.json"), &small_spec(20));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen-synth", "--spec", s(&spec), "--out", s(out), "--count", "1", "--seed", "17"]);
    }
    let strip = |d| snapshot(d).into_iter().filter(|(p, _)| p.to_str() != Some("run_manifest.json")).collect::<Vec<_>>();
    let (sa, sb) = (strip(&a), strip(&b));
    assert_eq!(sa, sb);
    assert!(sa.iter().any(|(p, _)| p.ends_with("case_0/modal2.nii")));
    let label = read_nifti(a.join("case_0/label.nii")).unwrap().data.to_labels().unwrap();
    assert_eq!(label.data().iter().copied().collect::<HashSet<u8>>(), (0..5).collect());

    let dataset = read_json(a.join("dataset.json"));
    assert_valid("dataset", &dataset);
    assert_valid("phantom_spec", &dataset["spec"]);
    let manifest = read_json(a.join("run_manifest.json"));
    assert_valid("run_manifest", &manifest);
    assert_eq!(manifest["command"], "gen-synth");
    assert_eq!(manifest["seed"], 17);

    let c = tmp.path().join("c");
    ok(&["gen-synth", "--spec", s(&spec), "--out", s(&c), "--count", "1", "--seed", "18"]);
    assert_ne!(strip(&c), sa);
}

#[test]
fn corrupted_dataset_records_its_region_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small_spec(20);
    spec["corruption"] = json!({"modality": 1, "mode": "swap-contrast", "region_start": [2, 3, 4], "region_size": [5, 6, 7]});
    let spec = write(&tmp.path().join("spec.json"), &spec);
    let out = tmp.path().join("d");
    ok(&["gen-synth", "--spec", s(&spec), "--out", s(&out), "--count", "2", "--seed", "1"]);
    for case in ["case_0", "case_1"] {
        let region = read_nifti(out.join(case).join("region.nii")).unwrap().data.to_labels().unwrap();
        assert_eq!(region.data().iter().filter(|&&v| v == 1).count(), 5 * 6 * 7);
        assert_eq!(region.get([2, 3, 4]), 1);
        assert_eq!(region.get([7, 3, 4]), 0);
    }
}

#[test]
fn bad_inputs_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bad_spec = small_spec(20);
    bad_spec["num_classes"] = json!(1);
    let bad_spec = write(&tmp.path().join("bad.json"), &bad_spec);
    let out = tmp.path().join("o");
    assert_eq!(code(&uafuse(&["gen-synth", "--spec", s(&bad_spec), "--out", s(&out)])), 3);
    let garbled = tmp.path().join("garbled.json");
    std::fs::write(&garbled, "{ not json").unwrap();
    assert_eq!(code(&uafuse(&["gen-synth", "--spec", s(&garbled), "--out", s(&out)])), 3);
    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&uafuse(&["gen-synth", "--spec", s(&missing), "--out", s(&out)])), 4);
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&uafuse(&["gen-synth", "--out", s(&blocker.join("sub")), "--count", "1"])), 4);
    assert_eq!(code(&uafuse(&["gen-synth", "--count", "1"])), 2);
    assert_eq!(code(&uafuse(&["no-such-command"])), 2);
    assert_eq!(code(&uafuse(&["--help"])), 0);

    let junk = tmp.path().join("junk.uaf1");
    std::fs::write(&junk, b"UAF1 definitely not a checkpoint").unwrap();
    let case = tmp.path().join("case");
    ok(&["gen-synth", "--spec", s(&write(&tmp.path().join("s.json"), &small_spec(16))), "--out", s(&case)]);
    let p = tmp.path().join("p");
    assert_eq!(code(&uafuse(&["predict", "--ckpt", s(&junk), "--case", s(&case.join("case_0")), "--out", s(&p)])), 7);
}

fn label_case(dir: &std::path::Path, labels: Vec<u8>, dims: [usize; 3]) {
    std::fs::create_dir_all(dir).unwrap();
    let img = NiftiImage { data: NiftiData::U8(Grid::new(dims, labels).unwrap()), spacing: [1.0; 3] };
    write_nifti(dir.join("label.nii"), &img).unwrap();
}

#[test]
fn eval_identity_prints_100_and_half_overlap_prints_50() {
    let tmp = tempfile::tempdir().unwrap();
    let (truth, pred) = (tmp.path().join("truth"), tmp.path().join("pred"));
    // |P| = |T| = 4 and |P ∩ T| = 2 for class 1.
    label_case(&truth.join("c1"), vec![1, 1, 1, 1, 0, 0, 0, 0], [2, 2, 2]);
    label_case(&pred.join("c1"), vec![0, 0, 1, 1, 1, 1, 0, 0], [2, 2, 2]);
    let out = ok(&["eval", "--pred", s(&pred), "--truth", s(&truth)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().next().unwrap().contains("class1"), "{text}");
    assert!(text.lines().nth(1).unwrap().split_whitespace().any(|w| w == "50.0"), "{text}");

    let out = ok(&["eval", "--pred", s(&truth), "--truth", s(&truth), "--classes", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row, ["c1", "100.0", "100.0", "100.0"], "{text}");
    let report: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_valid("eval_report", &report);
    assert_eq!(report["mean"], 1.0);

    let json_path = tmp.path().join("r.json");
    ok(&["eval", "--pred", s(&pred), "--truth", s(&truth), "--json", s(&json_path)]);
    let report = read_json(&json_path);
    assert_valid("eval_report", &report);
    assert_eq!(report["cases"][0]["dice"][0], 0.5);

    label_case(&pred.join("c1"), vec![0; 27], [3, 3, 3]);
    assert_eq!(code(&uafuse(&["eval", "--pred", s(&pred), "--truth", s(&truth)])), 3);
    assert_eq!(code(&uafuse(&["eval", "--pred", s(&tmp.path().join("nope")), "--truth", s(&truth)])), 4);
}

#[test]
fn gradcheck_exit_code_tracks_the_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let j = tmp.path().join("g.json");
    let out = ok(&["gradcheck", "--op", "sigmoid", "--seeds", "3", "--json", s(&j)]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("PASS"));
    let report = read_json(&j);
    assert_valid("gradcheck_report", &report);
    assert_eq!(report[0]["passed"], true);
    let out = uafuse(&["gradcheck", "--op", "sigmoid", "--seeds", "3", "--tolerance", "0"]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));
    assert_eq!(code(&uafuse(&["gradcheck", "--op", "maxpool"])), 3);
}

#[test]
fn train_predict_eval_slices_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-synth", "--spec", s(&write(&tmp.path().join("spec.json"), &small_spec(20))), "--out", s(&data), "--count", "2", "--seed", "3"]);
    let before = snapshot(&data);
    let cfg = write(&tmp.path().join("train.json"), &tiny_train_config());
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);

    let manifest = read_json(run.join("run_manifest.json"));
    assert_valid("run_manifest", &manifest);
    assert_valid("train_config", &manifest["config"]);
    assert_valid("train_config", &read_json(&cfg));
    let metrics = read_jsonl(run.join("metrics.jsonl"));
    assert_eq!(metrics.len(), 2);
    metrics.iter().for_each(|m| assert_valid("metrics_record", m));
    assert_eq!((metrics[0]["stage"].as_u64(), metrics[1]["stage"].as_u64()), (Some(1), Some(2)));
    let steps = read_jsonl(run.join("steps.jsonl"));
    assert_eq!(steps.len(), 4);
    steps.iter().for_each(|st| assert_valid("step_record", st));
    let summary = read_json(run.join("summary.json"));
    assert_valid("summary", &summary);
    assert!(run.join("best.uaf1").is_file() && run.join("final.uaf1").is_file());

    let pred = tmp.path().join("pred");
    ok(&["predict", "--ckpt", s(&run.join("final.uaf1")), "--case", s(&data.join("case_1")), "--out", s(&pred.join("case_1")), "--emit-uncertainty"]);
    let labels = read_nifti(pred.join("case_1/label.nii")).unwrap();
    assert_eq!(labels.data.dims(), [20; 3]);
    for k in 1..=2 {
        let NiftiData::F32(u) = read_nifti(pred.join(format!("case_1/u_modal{k}.nii"))).unwrap().data else { panic!("float map") };
        assert!(u.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let truth = tmp.path().join("truth");
    std::fs::create_dir_all(truth.join("case_1")).unwrap();
    std::fs::copy(data.join("case_1/label.nii"), truth.join("case_1/label.nii")).unwrap();
    let out = ok(&["eval", "--pred", s(&pred), "--truth", s(&truth), "--classes", "5"]);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("case"));

    let slices = tmp.path().join("slices");
    ok(&["slices", "--vol", s(&data.join("case_1/label.nii")), "--out", s(&slices)]);
    let pgm = std::fs::read(slices.join("slice_000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n20 20\n255\n"));
    let pgms = std::fs::read_dir(&slices).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"));
    assert_eq!(pgms.count(), 20);
    assert_valid("run_manifest", &read_json(slices.join("run_manifest.json")));

    assert_eq!(snapshot(&data), before, "commands must not modify their inputs");
    let same = uafuse(&["predict", "--ckpt", s(&run.join("final.uaf1")), "--case", s(&data.join("case_1")), "--out", s(&data.join("case_1"))]);
    assert_eq!(code(&same), 3);
    assert_eq!(snapshot(&data), before);

    // Same config and data give the same metrics apart from timings.
    let rerun = tmp.path().join("rerun");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&rerun)]);
    let strip = |mut v: serde_json::Value| {
        v["seconds"] = json!(0);
        v
    };
    let again: Vec<_> = read_jsonl(rerun.join("metrics.jsonl")).into_iter().map(strip).collect();
    assert_eq!(again, metrics.into_iter().map(strip).collect::<Vec<_>>());
    assert_eq!(std::fs::read(rerun.join("final.uaf1")).unwrap(), std::fs::read(run.join("final.uaf1")).unwrap());
}

#[test]
fn non_finite_training_exits_with_a_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let mut p = uafuse::data::generate_phantom(&serde_json::from_value(small_spec(16)).unwrap(), 2).unwrap();
    p.volume.modalities[1].data_mut()[0..2000].fill(f32::NAN);
    write_case(data.join("case_0"), &p.volume, None).unwrap();
    let mut cfg = tiny_train_config();
    cfg["normalize"] = json!(false);
    cfg["patch_size"] = json!([16, 16, 16]);
    cfg.as_object_mut().unwrap().remove("train_cases");
    cfg.as_object_mut().unwrap().remove("val_cases");
    let cfg = write(&tmp.path().join("c.json"), &cfg);
    let run = tmp.path().join("run");
    let out = uafuse(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(code(&out), 6, "{}", String::from_utf8_lossy(&out.stderr));
    let dump = read_json(run.join("nan_dump.json"));
    assert_valid("nan_dump", &dump);
    assert_eq!((dump["epoch"].as_u64(), dump["batch"].as_u64(), dump["seed"].as_u64()), (Some(0), Some(0), Some(4)));

    let mut bad = tiny_train_config();
    bad["stage_switch_epoch"] = json!(9);
    let bad = write(&tmp.path().join("bad.json"), &bad);
    assert_eq!(code(&uafuse(&["train", "--config", s(&bad), "--data", s(&data), "--out", s(&run)])), 3);
    let mut unknown = tiny_train_config();
    unknown["learning_rat"] = json!(0.1);
    let unknown = write(&tmp.path().join("unknown.json"), &unknown);
    assert_eq!(code(&uafuse(&["train", "--config", s(&unknown), "--data", s(&data), "--out", s(&run)])), 3);
}
