use std::path::Path;
use std::process::{Command, Output};

fn daa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY: &str = r#"
[net]
refiner_width = 4
generator_width = 4
mapper_hidden = 4
disc_widths = [2, 2, 2, 2]
classifier_width = 2
classifier_fc = [8, 8]

[classifier]
epochs = 2
augment = false

[train]
epochs = 1
batch_size = 4
generator_pretrain_epochs = 1
refiner_warmup_epochs = 1
val_mixes = 2

[eval]
seeds = [0]
classifier_width = 2
classifier_hidden = [4, 4]

[eval.classifier]
epochs = 1

[eval.segmenter]
width = 2
epochs = 1
"#;

#[test]
fn help_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = daa(&["--help"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("pretrain-f"));
    let o = daa(&["unknown-thing"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = daa(&["phantom", "--out", "x", "--n", "many"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = daa(&["eval", "--data", "missing", "--report", "r.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"));
    std::fs::write(tmp.path().join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let o = daa(&["--config", "bad.toml", "phantom", "--out", "d"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn phantom_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = daa(&["phantom", "--n", "50", "--seed", "7", "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert_eq!(a.len(), 51);
    assert_eq!(a, b);
    let o = daa(&["phantom", "--n", "50", "--seed", "8", "--out", "c"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(a, tree(&tmp.path().join("c")));
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    std::fs::write(p.join("tiny.toml"), TINY).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "tiny.toml"];
        full.extend_from_slice(args);
        let o = daa(&full, p);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["phantom", "--n", "24", "--size", "16", "--out", "data"]);
    run(&["pretrain-f", "--data", "data", "--out", "f.ckpt"]);
    run(&["train", "--data", "data", "--classifier", "f.ckpt", "--out", "m.ckpt", "--log", "log.csv"]);
    let log = std::fs::read_to_string(p.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("epoch,step,L_D,L_G"));

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("data/manifest.json")).unwrap()).unwrap();
    let ids: Vec<String> = manifest["train"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let label = |id: &str| manifest["subjects"][id]["label"].as_u64().unwrap();
    let nor = ids.iter().find(|i| label(i) == 0).unwrap();
    let hcm = ids.iter().find(|i| label(i) == 2).unwrap();
    let swap = format!("1:{hcm}");
    run(&["generate", "--data", "data", "--model", "m.ckpt", "--base", nor, "--swap", &swap, "--out", "g.png", "--json", "g.json"]);
    let png = std::fs::read(p.join("g.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("g.json")).unwrap()).unwrap();
    assert_eq!(g["target_label"], 2);

    run(&["traverse", "--data", "data", "--model", "m.ckpt", "--subject", nor, "--channel", "0", "--op", "dilate", "--steps", "1,2", "--out-dir", "trav"]);
    assert!(p.join("trav/step_002_factor.png").exists());
    assert!(p.join("trav/traverse.json").exists());

    let dcm = ids.iter().find(|i| label(i) == 1).unwrap();
    let mixed = format!("0:{dcm}");
    let o = daa(
        &["--config", "tiny.toml", "generate", "--data", "data", "--model", "m.ckpt", "--base", nor, "--swap", &swap, "--swap", &mixed, "--out", "bad.png"],
        p,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("patholog"), "{}", stderr(&o));

    let out = run(&["augment", "--data", "data", "--model", "m.ckpt", "--out", "aug", "--target-class", "3", "--count", "2", "--pool-multiplier", "8"]);
    assert!(out.starts_with("kept 2 of 16 candidates"), "{out}");

    run(&["eval", "--data", "data", "--augmented", "aug", "--fid-model", "m.ckpt", "--report", "report.csv"]);
    let report = std::fs::read_to_string(p.join("report.csv")).unwrap();
    assert!(report.starts_with("experiment,seed,metric,value\nbaseline,0,accuracy,"));
    assert!(report.contains("baseline,0,dice,"));
    assert!(report.contains("augmented,0,accuracy,"));
    assert!(report.contains("augmented,0,proxy_fid,"));
}
