use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mrrc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrrc"))
        .args(args)
        .current_dir(dir)
        .env_remove("MRRC_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrrc(dir.path(), &["gen", "--n", "100", "--seed", "7", "--out", "a.jsonl"]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("wrote 100 scenes"));
    mrrc(dir.path(), &["gen", "--n", "100", "--seed", "7", "--out", "b.jsonl"]);
    let (a, b) = (fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(a, b);
    let data = mrrc_core::data::load_dataset(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(data.len(), 100);
    assert!(dir.path().join("vocab.txt").exists());
}

#[test]
fn zero_scenes_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrrc(dir.path(), &["gen", "--n", "0"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("data.jsonl").exists());
    let out = mrrc(dir.path(), &["gen", "--set", "data.n=0"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn exit_codes_separate_bad_input_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mrrc(dir.path(), &["nosuch"])), 1);
    assert_eq!(code(&mrrc(dir.path(), &["train", "--set", "model.bogus=1"])), 1);
    assert_eq!(code(&mrrc(dir.path(), &["train", "--variant", "NOPE"])), 1);
    assert_eq!(code(&mrrc(dir.path(), &["decode", "--checkpoint", "missing.ckpt"])), 2);
    assert_eq!(code(&mrrc(dir.path(), &["--help"])), 0);
    fs::write(dir.path().join("data.jsonl"), "{\"id\":").unwrap();
    assert_eq!(code(&mrrc(dir.path(), &["train"])), 1);
}

#[test]
fn config_file_env_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[data]\nn = 5\nseed = 3\n\n[paths]\ndataset = \"from_file.jsonl\"\n").unwrap();
    let out = mrrc(dir.path(), &["--config", "run.toml", "gen"]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("wrote 5 scenes to from_file.jsonl"));
    let out = Command::new(env!("CARGO_BIN_EXE_mrrc"))
        .args(["gen", "--n", "4"])
        .current_dir(dir.path())
        .env("MRRC_CONFIG", "run.toml")
        .output()
        .unwrap();
    assert!(stdout(&out).contains("wrote 4 scenes to from_file.jsonl"), "{out:?}");
    fs::write(dir.path().join("bad.toml"), "[data]\nsize = 5\n").unwrap();
    assert_eq!(code(&mrrc(dir.path(), &["--config", "bad.toml", "gen"])), 1);
}

#[test]
fn train_decode_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&mrrc(d, &["gen", "--n", "12", "--seed", "1"])), 0);
    let out = mrrc(d, &["train", "--variant", "SEMI_FDC_FDC", "--max-steps", "20", "--set", "model.e=16"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let rec: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(rec["steps"], 20);
    assert_eq!(rec["variant"], "SEMI_FDC_FACT_FDC_MRRC");
    let hist = fs::read_to_string(d.join("history.csv")).unwrap();
    assert!(hist.starts_with("epoch,nll,acc\n"));

    assert_eq!(code(&mrrc(d, &["decode", "--greedy", "--out", "greedy.tsv"])), 0);
    assert_eq!(code(&mrrc(d, &["--workers", "2", "decode", "--beam", "1", "--out", "beam1.tsv"])), 0);
    let greedy = fs::read_to_string(d.join("greedy.tsv")).unwrap();
    assert_eq!(greedy, fs::read_to_string(d.join("beam1.tsv")).unwrap());
    assert_eq!(greedy.lines().count(), 12);
    for line in greedy.lines() {
        let (id, caption) = line.split_once('\t').unwrap();
        assert!(id.starts_with("scene"));
        for marker in ["<pad>", "<bos>", "<eos>"] {
            assert!(!caption.contains(marker));
        }
    }

    let out = mrrc(d, &["eval", "--beam", "2", "--metrics", "m.json"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let m: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(m["scenes"], 12);
    assert_eq!(fs::read_to_string(d.join("m.json")).unwrap(), stdout(&out));

    let out = mrrc(d, &["scst", "--steps", "3", "--out", "tuned.ckpt"]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(d.join("tuned.ckpt").exists());
    assert_eq!(fs::read_to_string(d.join("scst_history.csv")).unwrap().lines().count(), 4);
}

#[test]
fn dataset_that_does_not_fit_the_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    mrrc(d, &["gen", "--n", "3"]);
    assert_eq!(code(&mrrc(d, &["train", "--set", "model.region_dim=8"])), 1);
    assert_eq!(code(&mrrc(d, &["train", "--set", "model.vocab_size=10"])), 1);
}

#[test]
fn gradcheck_certifies_all_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrrc(dir.path(), &["gradcheck", "--variant", "all", "--d", "8"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(stdout(&out).matches("\"passed\":true").count(), 5);
    let out = mrrc(dir.path(), &["gradcheck", "--variant", "FULL_FACT", "--tol", "1e-12"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn tpr_lab_report() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["tprlab", "tpr-lab"] {
        let out = mrrc(dir.path(), &[name, "--t", "4", "--dims", "4,16", "--trials", "5"]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("mode\tT\tdim\tmean_err\tmax_err"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let max: f64 = r[4].parse().unwrap();
            if r[0] == "orthonormal" {
                assert!(max < 1e-9);
            }
        }
    }
}
