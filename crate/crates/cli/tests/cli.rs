use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_softblob");

const FAST: &str = "max_epochs = 3\npatience = 2\nwarmup = 1\nhidden = 12\nmlp_hidden = 12\nexplain_steps = 10\nig_steps = 8\nexplain_limit = 3\nz_samples = 20\n";

fn softblob(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(BIN).current_dir(dir).args(args).env("RUST_LOG", "warn").output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = softblob(dir, args);
    assert!(out.status.success(), "softblob {args:?} failed");
    String::from_utf8(out.stdout).unwrap()
}

/// Synthetic motif data under `dir/data` with a fast config appended.
fn motif_setup(dir: &Path, extra: &str) {
    ok(dir, &["synth", "--count", "16", "--out", "data"]);
    let conf = dir.join("data/run.conf");
    let text = std::fs::read_to_string(&conf).unwrap();
    std::fs::write(&conf, format!("{text}{FAST}{extra}")).unwrap();
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_writes_every_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    motif_setup(d, "");
    let base = ["--config", "data/run.conf", "--out", "r", "--jobs", "2", "--plot-data"];
    let step = |cmd: &[&str]| ok(d, &[&base[..], cmd].concat());
    step(&["featurize"]);
    assert!(step(&["featurize"]).contains("cache hit"));
    step(&["train"]);
    step(&["eval", "--ensemble"]);
    step(&["explain"]);
    step(&["bio-eval"]);
    step(&["explain", "--method", "ig"]);
    step(&["bio-eval", "--method", "ig"]);
    step(&["blobs"]);
    step(&["report"]);

    let r = d.join("r");
    assert_eq!(std::fs::read_to_string(r.join("config.snapshot")).unwrap(), std::fs::read_to_string(d.join("data/run.conf")).unwrap());
    for f in [
        "graphs/manifest.json",
        "graphs/failures.json",
        "train/k4/seed_7/model.ckpt",
        "eval/metrics.csv",
        "explain/gnnexplainer/edge_masks.csv",
        "explain/gnnexplainer/feature_masks.csv",
        "explain/ig/attributions.csv",
        "bioeval/gnnexplainer/plot/distance_histogram.csv",
        "blobs/blobs.csv",
        "plot/training_curves.csv",
        "report.csv",
    ] {
        assert!(r.join(f).exists(), "{f} missing");
    }
    let edges = std::fs::read_to_string(r.join("explain/gnnexplainer/edge_masks.csv")).unwrap();
    assert!(edges.starts_with("protein_id,edge_i,edge_j,M\n"));
    let feats = std::fs::read_to_string(r.join("explain/gnnexplainer/feature_masks.csv")).unwrap();
    assert!(feats.starts_with("protein_id,feature_index,F\n"));

    let eval = json(&r.join("eval/report.json"));
    assert!(eval["k4"]["ensemble"]["accuracy"].is_number());
    let bio = json(&r.join("bioeval/gnnexplainer/report.json"));
    assert_eq!(bio["fidelity"]["levels"].as_array().unwrap().len(), 6);
    assert!(json(&r.join("bioeval/ig/report.json"))["fidelity"]["skipped"].is_string());
    let blobs = json(&r.join("blobs/report.json"));
    assert_eq!(blobs["active_sites"]["proteins"].as_array().unwrap().len(), 16);
    let report = json(&r.join("report.json"));
    for s in ["train", "eval", "bioeval", "blobs"] {
        assert!(report.get(s).is_some(), "{s} section missing");
    }
}

#[test]
fn seeds_and_blob_grid_give_one_checkpoint_each() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    motif_setup(d, "");
    let conf = d.join("data/run.conf");
    let text = std::fs::read_to_string(&conf).unwrap().replace("blobs = 4\n", "blobs = 1,3\n");
    std::fs::write(&conf, text).unwrap();
    let args = ["--config", "data/run.conf", "--out", "r", "--seeds", "1,2,3,4,5", "--jobs", "4"];
    ok(d, &[&args[..], &["featurize"]].concat());
    ok(d, &[&args[..], &["train"]].concat());
    for k in ["k1", "k3"] {
        for s in 1..=5 {
            assert!(d.join(format!("r/train/{k}/seed_{s}/model.ckpt")).exists(), "{k} seed {s}");
        }
        let ens = json(&d.join(format!("r/train/{k}/ensemble.json")));
        assert_eq!(ens["members"].as_object().unwrap().len(), 5);
        assert!(ens["ensemble_val"].is_object());
    }
    let before = std::fs::metadata(d.join("r/train/k1/seed_1/model.ckpt")).unwrap().modified().unwrap();
    ok(d, &[&args[..], &["train"]].concat());
    let after = std::fs::metadata(d.join("r/train/k1/seed_1/model.ckpt")).unwrap().modified().unwrap();
    assert_eq!(before, after, "unchanged inputs retrain");
}

#[test]
fn node_task_from_two_hop_data() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--kind", "two-hop", "--count", "10", "--out", "data"]);
    let conf = d.join("data/run.conf");
    let text = std::fs::read_to_string(&conf).unwrap();
    std::fs::write(&conf, format!("{text}{FAST}")).unwrap();
    let args = ["--config", "data/run.conf", "--out", "r"];
    ok(d, &[&args[..], &["featurize"]].concat());
    ok(d, &[&args[..], &["train"]].concat());
    ok(d, &[&args[..], &["eval"]].concat());
    let eval = json(&d.join("r/eval/report.json"));
    assert!(eval["k4"]["member_mean"]["top10_precision"].is_number());
    let out = softblob(d, &[&args[..], &["explain"]].concat());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(softblob(d, &["featurize"]).status.code(), Some(1), "missing --config");
    assert_eq!(softblob(d, &["frobnicate"]).status.code(), Some(1), "unknown subcommand");
    assert_eq!(softblob(d, &["--jobs", "0", "synth"]).status.code(), Some(1));

    std::fs::create_dir(d.join("pdb")).unwrap();
    std::fs::write(d.join("bad.conf"), "pdb_dir = pdb\nlearning_rate = 3\n").unwrap();
    assert_eq!(softblob(d, &["--config", "bad.conf", "featurize"]).status.code(), Some(1), "unknown key");
    std::fs::write(d.join("ok.conf"), "pdb_dir = pdb\n").unwrap();
    assert_eq!(softblob(d, &["--config", "ok.conf", "explain", "--method", "lime"]).status.code(), Some(1));
    assert_eq!(softblob(d, &["--config", "ok.conf", "train"]).status.code(), Some(2), "no graph cache");
    assert_eq!(softblob(d, &["--config", "ok.conf", "featurize"]).status.code(), Some(2), "no structures");
    assert!(d.join("run/config.snapshot").exists());

    std::fs::write(d.join("pdb/broken.pdb"), "ATOM  garbage\n").unwrap();
    assert_eq!(softblob(d, &["--config", "ok.conf", "featurize"]).status.code(), Some(2));
    let failures = json(&d.join("run/graphs/failures.json"));
    assert_eq!(failures[0]["protein_id"], "broken");
}
