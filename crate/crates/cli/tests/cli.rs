use std::path::Path;
use std::process::{Command, Output};

use sadmil::dataio::load_bags;
use sadmil::milmodel::forward;
use sadmil::{Bag, Checkpoint};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "data.num_bags=30",
    "data.bag_size_range=[6,10]",
    "data.feature_dim=4",
    "data.signal_dims=[0]",
    "data.signal_shift=2.0",
    "data.run_length_range=[2,3]",
    "train.model.input_dim=4",
    "train.model.embed_dim=5",
    "train.model.attention_dim=3",
    "train.max_epochs=3",
    "train.learning_rate=0.01",
    "sweep.alphas=[0.0,0.5]",
    "sweep.repeats=2",
];

fn sadmil(sub: &str, args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sadmil"));
    cmd.arg(sub);
    for s in SMALL.iter().chain(extra) {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    ok(sadmil("gen-data", &["--out", p(dir)], extra));
    dir.join("bags.jsonl")
}

#[test]
fn gen_data_writes_one_line_per_bag() {
    let tmp = TempDir::new().unwrap();
    let out = ok(sadmil("gen-data", &["--out", p(tmp.path())], &[]));
    assert_eq!(read(tmp.path().join("bags.jsonl")).lines().count(), 30);
    assert!(tmp.path().join("config.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("30 bags"));
}

#[test]
fn seed_override_changes_content_not_schema() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let da = load_bags(gen(a.path(), &[])).unwrap();
    let db = load_bags(gen(b.path(), &["data.seed=12"])).unwrap();
    assert_ne!(da, db);
    assert_eq!(da.len(), db.len());
    assert_eq!(da[0].feature_dim(), db[0].feature_dim());
}

#[test]
fn invalid_range_names_field() {
    let tmp = TempDir::new().unwrap();
    let out = sadmil(
        "gen-data",
        &["--out", p(tmp.path())],
        &["data.bag_size_range=[9,3]"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bag_size_range"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = sadmil("gen-data", &["--out", p(tmp.path())], &["data.num_bgs=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("data.num_bgs"));
}

#[test]
fn malformed_data_exits_with_data_code() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("bad.jsonl");
    std::fs::write(&data, "{\"id\": 3}\n").unwrap();
    let out = sadmil(
        "train",
        &["--data", p(&data), "--out", p(&tmp.path().join("o"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn train_is_deterministic_and_eval_reproduces_report() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&r1)],
        &["train.loss.alpha=0"],
    ));
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&r2)],
        &["train.loss.alpha=0"],
    ));
    for f in [
        "report.json",
        "checkpoint.json",
        "metrics.csv",
        "config.json",
    ] {
        assert_eq!(read(r1.join(f)), read(r2.join(f)), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&read(r1.join("report.json"))).unwrap();
    assert_eq!(report["method"], "Att-MIL baseline");

    let out = ok(sadmil(
        "eval",
        &[
            "--checkpoint",
            p(&r1.join("checkpoint.json")),
            "--data",
            p(&r1.join("test_bags.jsonl")),
        ],
        &[],
    ));
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        read(r1.join("metrics.csv"))
    );
}

#[test]
fn resume_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let out = sadmil(
        "train",
        &[
            "--data",
            p(&data),
            "--out",
            p(&tmp.path().join("o")),
            "--checkpoint",
            "x.json",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not supported"));
}

#[test]
fn eval_without_instance_labels_omits_slice_row() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&run)],
        &[],
    ));
    let unlabeled: Vec<Bag> = load_bags(&data)
        .unwrap()
        .into_iter()
        .map(|b| Bag {
            instance_labels: None,
            ..b
        })
        .collect();
    let path = tmp.path().join("unlabeled.jsonl");
    sadmil::dataio::save_bags(&unlabeled, &path).unwrap();
    let out = ok(sadmil(
        "eval",
        &[
            "--checkpoint",
            p(&run.join("checkpoint.json")),
            "--data",
            p(&path),
        ],
        &[],
    ));
    let csv = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(csv.contains("\nscan,"));
    assert!(!csv.contains("slice"));
    assert!(stderr(&out).contains("instance labels"));
}

#[test]
fn single_class_auc_is_left_empty() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&run)],
        &[],
    ));
    let negatives: Vec<Bag> = load_bags(&data)
        .unwrap()
        .into_iter()
        .filter(|b| b.bag_label == 0)
        .collect();
    let path = tmp.path().join("neg.jsonl");
    sadmil::dataio::save_bags(&negatives, &path).unwrap();
    let out = ok(sadmil(
        "eval",
        &[
            "--checkpoint",
            p(&run.join("checkpoint.json")),
            "--data",
            p(&path),
        ],
        &[],
    ));
    let csv = String::from_utf8_lossy(&out.stdout).into_owned();
    let scan = csv.lines().find(|l| l.starts_with("scan,")).unwrap();
    assert!(scan.ends_with(','), "{scan}");
    assert!(stderr(&out).contains("AUC undefined"));
}

#[test]
fn dimension_mismatch_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&run)],
        &[],
    ));
    let other = tmp.path().join("other");
    let wide = gen(&other, &["data.feature_dim=6"]);
    let out = sadmil(
        "eval",
        &[
            "--checkpoint",
            p(&run.join("checkpoint.json")),
            "--data",
            p(&wide),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("expects 4"));
}

#[test]
fn export_attention_matches_forward_pass() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&run)],
        &["train.loss.alpha=0.5"],
    ));
    let traces = tmp.path().join("traces");
    let test_bags = run.join("test_bags.jsonl");
    ok(sadmil(
        "export-attention",
        &[
            "--checkpoint",
            p(&run.join("checkpoint.json")),
            "--data",
            p(&test_bags),
            "--out",
            p(&traces),
        ],
        &[],
    ));
    let ck = Checkpoint::load(run.join("checkpoint.json")).unwrap();
    let params = ck.params().unwrap();
    for bag in load_bags(&test_bags).unwrap() {
        let fwd = forward(&bag, &params, &ck.model).unwrap();
        let csv = read(traces.join(format!("{}.csv", bag.id)));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("index,f,s,threshold,instance_truth"));
        for (i, line) in lines.enumerate() {
            let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cells[0], i as f64);
            assert!((cells[1] - fwd.f[i]).abs() < 1e-12);
            assert!((cells[2] - fwd.s[i]).abs() < 1e-12);
            assert_eq!(cells[3], 1.0 / bag.len() as f64);
        }
    }
}

#[test]
fn export_single_and_uniform_bags() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&run)],
        &[],
    ));
    let bags = vec![
        Bag {
            id: "one".into(),
            instances: vec![vec![0.5; 4]],
            bag_label: 0,
            instance_labels: None,
        },
        Bag {
            id: "flat".into(),
            instances: vec![vec![0.1; 4]; 5],
            bag_label: 0,
            instance_labels: None,
        },
    ];
    let path = tmp.path().join("special.jsonl");
    sadmil::dataio::save_bags(&bags, &path).unwrap();
    let traces = tmp.path().join("traces");
    ok(sadmil(
        "export-attention",
        &[
            "--checkpoint",
            p(&run.join("checkpoint.json")),
            "--data",
            p(&path),
            "--out",
            p(&traces),
        ],
        &[],
    ));
    let one = read(traces.join("one.csv"));
    let row: Vec<&str> = one.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[2], row[3]), ("1", "1"));
    assert_eq!(one.lines().count(), 2);
    for line in read(traces.join("flat.csv")).lines().skip(1) {
        let s: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((s - 0.2).abs() < 1e-15);
    }
}

#[test]
fn export_rejects_baseline_pooling() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(sadmil(
        "train",
        &["--data", p(&data), "--out", p(&run)],
        &["train.model.pooling=max", "train.loss.alpha=0"],
    ));
    let out = sadmil(
        "export-attention",
        &[
            "--checkpoint",
            p(&run.join("checkpoint.json")),
            "--data",
            p(&data),
            "--out",
            p(&tmp.path().join("t")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no attention"));
}

#[test]
fn sweep_is_deterministic_across_parallelism() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(sadmil(
        "sweep",
        &["--data", p(&data), "--out", p(&a), "--parallel", "2"],
        &[],
    ));
    ok(sadmil(
        "sweep",
        &["--data", p(&data), "--out", p(&b), "--parallel", "1"],
        &[],
    ));
    let csv = read(a.join("sweep.csv"));
    assert_eq!(csv, read(b.join("sweep.csv")));
    assert!(csv.starts_with("mode,alpha,repeat,level,acc,pre,rec,f1,auc\n"));
    // 2 modes x 2 alphas x (2 repeats + mean + sd) x (scan + slice)
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 4 * 2);
}

#[test]
fn config_echo_survives_a_failed_run() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("o");
    let out = sadmil(
        "train",
        &[
            "--data",
            p(&tmp.path().join("missing.jsonl")),
            "--out",
            p(&out_dir),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(out_dir.join("config.json").exists());
}
