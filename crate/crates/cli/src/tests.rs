use std::fs;
use std::path::Path;

use super::execute;

fn mvl(dir: &Path, args: &[&str]) -> u8 {
    let args: Vec<String> = args
        .iter()
        .map(|a| a.strip_prefix('@').map_or(a.to_string(), |rel| dir.join(rel).display().to_string()))
        .collect();
    execute(std::iter::once("mvl".to_string()).chain(args))
}

const TINY: &str = r#"
dataset = "d.mvds"
repetitions = 2
checkpoints = true
[train]
batch_size = 32
max_epochs = 2
[encoder_settings]
hidden = 8
layers = 1
embedding_dim = 8
dense = 16
heads = 2
key_dim = 4
"#;

#[test]
fn synth_train_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(mvl(d, &["synth", "--train", "80", "--test", "30", "--seed", "3", "--out", "@d.mvds"]), 0);
    fs::write(d.join("c.toml"), TINY).unwrap();

    let code = mvl(d, &["train", "--config", "@c.toml", "--out", "@run", "--jobs", "1", "--reps", "1", "--seed", "4"]);
    assert_eq!(code, 0);
    let run = d.join("run");
    for f in ["manifest.json", "records.csv", "checkpoints/gru-feature-rep0.mvlc", "reports/summary.md"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let records = fs::read_to_string(run.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 2);
    assert!(records.lines().nth(1).unwrap().contains(",0,4,ok,"));

    fs::remove_file(run.join("reports/summary.md")).unwrap();
    assert_eq!(mvl(d, &["report", "--out", "@run"]), 0);
    assert!(run.join("reports/summary.md").exists());

    assert_eq!(mvl(d, &["entropy", "@d.mvds", "--out", "@e.csv"]), 0);
    assert!(fs::read_to_string(d.join("e.csv")).unwrap().starts_with("view,feature,mean"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(mvl(d, &["inspect-params"]), 0);
    assert_eq!(mvl(d, &["--help"]), 0);
    assert_eq!(mvl(d, &["frobnicate"]), 1);
    assert_eq!(mvl(d, &["train", "--config", "@missing.toml"]), 1);
    assert_eq!(mvl(d, &["train", "--config", "@x.toml", "--jobs", "zero"]), 1);

    for (name, text) in [
        ("bad.toml", "repetitions = 0\n[synth]\ntrain = 10\n"),
        ("unknown.toml", "colour = \"red\"\n"),
        ("search.toml", "encoder = \"search\"\n[synth]\ntrain = 10\ntest = 5\n"),
        ("illegal.toml", "strategy = \"input\"\ncomponent = \"gfusion\"\n[synth]\ntrain = 10\n"),
    ] {
        fs::write(d.join(name), text).unwrap();
        assert_eq!(mvl(d, &["train", "--config", &format!("@{name}")]), 1, "{name}");
    }
    fs::write(d.join("jobs.toml"), "[synth]\ntrain = 10\ntest = 5\n").unwrap();
    assert_eq!(mvl(d, &["train", "--config", "@jobs.toml", "--jobs", "0"]), 1);
    fs::write(d.join("gone.toml"), "dataset = \"nowhere.mvds\"\n").unwrap();
    assert_eq!(mvl(d, &["train", "--config", "@gone.toml"]), 2);
    assert_eq!(mvl(d, &["report", "--out", "@no-run"]), 2);
    assert_eq!(mvl(d, &["report", "--out", "@", "--group-by", "galaxy"]), 1);
}
