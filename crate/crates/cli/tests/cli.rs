use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wskan::kan::{InitConfig, KanNet};
use wskan::spline::SplineSpec;

fn wskan(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wskan"))
        .args(args)
        .env("WSKAN_DATA_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn sine_zoo(root: &Path, name: &str) -> String {
    ok(wskan(
        &["zoo-build", "--task", "sine-inr", "--n", "30", "--dims", "2,3,3,1", "--grid", "4", "--kan-epochs", "3", "--out", name],
        root,
    ))
}

#[test]
fn zoo_build_splits_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = sine_zoo(dir.path(), "a");
    assert!(out.contains("(24 train / 3 val / 3 test)"), "{out}");
    assert!(out.contains("config hash"));
    sine_zoo(dir.path(), "b");
    let a = std::fs::read(dir.path().join("a/manifest.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/manifest.json")).unwrap();
    assert_eq!(a, b);

    let o = wskan(&["zoo-build", "--task", "sine-inr", "--n", "0", "--out", "c"], dir.path());
    assert_eq!(code(&o), 2);
    let o = wskan(&["zoo-build", "--task", "images", "--n", "3", "--out", "c"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn train_eval_and_ood() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    sine_zoo(root, "zoo");
    let train = |model: &str, out: &str| {
        wskan(
            &["train-meta", "--zoo", "zoo", "--model", model, "--epochs", "2", "--hidden", "4", "--layers", "1", "--seed", "0,1", "--out", out],
            root,
        )
    };
    let out = ok(train("wskan", "ws.bin"));
    assert!(out.contains("wskan seed 1"), "{out}");
    for s in [0, 1] {
        assert!(root.join(format!("ws-seed{s}.bin")).exists());
        let log = std::fs::read_to_string(root.join(format!("ws-seed{s}.log.jsonl"))).unwrap();
        assert!(log.lines().count() >= 2);
    }
    assert_eq!(code(&train("transformer", "x.bin")), 2);

    let out = ok(wskan(
        &["eval", "--zoo", "zoo", "--checkpoint", "ws-seed0.bin", "--checkpoint", "ws-seed1.bin", "--out", "res.jsonl"],
        root,
    ));
    assert!(out.contains("mean ± std over 2 runs"), "{out}");
    let res = std::fs::read_to_string(root.join("res.jsonl")).unwrap();
    assert_eq!(res.lines().count(), 3);
    for line in res.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["config_hash"].is_string());
    }
    let o = wskan(&["eval", "--zoo", "zoo", "--checkpoint", "ws-seed0.bin", "--metrics", "roc-auc"], root);
    assert_eq!(code(&o), 2);

    let out = ok(wskan(&["ood-eval", "--checkpoint", "ws-seed0.bin", "--zoo", "zoo", "--widths", "5", "--n", "4", "--kan-epochs", "2"], root));
    assert!(out.contains("width 5 ([2, 5, 5, 1], 4 models)"), "{out}");

    ok(wskan(&["train-meta", "--zoo", "zoo", "--model", "mlp", "--epochs", "1", "--hidden", "4", "--out", "mlp.bin"], root));
    let o = wskan(&["ood-eval", "--checkpoint", "mlp.bin", "--zoo", "zoo", "--widths", "5"], root);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_symmetry_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SplineSpec::new(-1.0, 1.0, 5, 3).unwrap();
    let net = KanNet::init(&[2, 4, 3, 1], spec, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    std::fs::write(dir.path().join("net.bin"), net.to_bytes()).unwrap();
    std::fs::write(dir.path().join("net.txt"), net.to_text()).unwrap();
    let out = ok(wskan(&["verify-symmetry", "--checkpoint", "net.bin"], dir.path()));
    assert!(out.contains("1 of 1 nets invariant"), "{out}");
    ok(wskan(&["verify-symmetry", "--checkpoint", "net.txt"], dir.path()));
    assert_eq!(code(&wskan(&["verify-symmetry", "--checkpoint", "net.bin", "--tol", "0"], dir.path())), 2);
    assert_eq!(code(&wskan(&["verify-symmetry", "--checkpoint", "missing.bin"], dir.path())), 3);
    std::fs::write(dir.path().join("bad.bin"), b"KANCjunk").unwrap();
    assert_eq!(code(&wskan(&["verify-symmetry", "--checkpoint", "bad.bin"], dir.path())), 3);
}

#[test]
fn prune_modes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(wskan(
        &["zoo-build", "--task", "prune-mask", "--n", "10", "--dims", "2,3,2", "--kan-epochs", "3", "--splits", "6,2,2", "--out", "pz"],
        root,
    ));
    let out = ok(wskan(&["prune", "--zoo", "pz", "--mode", "oracle", "--out", "p.jsonl"], root));
    assert!(out.contains("oracle mode"), "{out}");
    assert!(out.contains("noise bin"));
    assert_eq!(code(&wskan(&["prune", "--zoo", "pz", "--mode", "wskan"], root)), 2);

    ok(wskan(&["train-meta", "--zoo", "pz", "--model", "wskan", "--epochs", "2", "--hidden", "4", "--out", "m.bin"], root));
    let out = ok(wskan(&["prune", "--zoo", "pz", "--mode", "wskan", "--checkpoint", "m.bin"], root));
    assert!(out.contains("wskan mode"), "{out}");
    // A WS-KAN checkpoint is not a baseline.
    assert_eq!(code(&wskan(&["prune", "--zoo", "pz", "--mode", "baseline", "--checkpoint", "m.bin"], root)), 2);
    assert_eq!(code(&wskan(&["prune", "--zoo", "missing", "--mode", "oracle"], root)), 3);
}
