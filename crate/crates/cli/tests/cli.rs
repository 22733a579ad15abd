use std::path::Path;
use std::process::{Command, Output};

fn imooe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imooe")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&imooe(&["generate", "--system", "dr", "--envs", "2", "--traj", "2", "--res", "16", "--seed", "4", "--out", s(&data)]));
    for split in ["train", "id", "ood"] {
        assert!(data.join(split).join("manifest.json").exists(), "{split}");
    }
    let config = dir.path().join("train.toml");
    std::fs::write(
        &config,
        "epochs = 1\nbatch_size = 2\n[model.expert]\nwidth = 8\nmodes = 4\nlayers = 1\nwindow = 4\n[weights]\nwarmup_end = 0\nramp_end = 1\ntotal = 1\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&imooe(&["train", "--config", s(&config), "--data", s(&data.join("train")), "--out", s(&run)]));
    assert!(run.join("final.h5").exists());
    assert!(run.join("history.jsonl").exists());
    let ck = run.join("final.h5");
    for split in ["id", "ood"] {
        let out = run.join(format!("{split}.json"));
        ok(&imooe(&["eval", "--ckpt", s(&ck), "--data", s(&data.join(split)), "--split", split, "--out", s(&out)]));
        assert!(out.exists());
    }
    let plots = dir.path().join("plots");
    let out = imooe(&[
        "report",
        "--in",
        s(&run.join("id.json")),
        s(&run.join("ood.json")),
        "--plots",
        s(&plots),
        "--ckpt",
        s(&ck),
        "--data",
        s(&data.join("ood")),
    ]);
    ok(&out);
    assert!(plots.join("showcase_env0_traj0.png").exists());
    assert!(plots.join("run_ood_summary.csv").exists());
}

#[test]
fn errors_exit_nonzero_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.h5");
    let out = imooe(&["eval", "--ckpt", s(&missing), "--data", s(dir.path()), "--split", "ood", "--out", s(&dir.path().join("r.json"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:") && err.contains("nope.h5"), "{err}");

    let out = imooe(&["generate", "--system", "xx", "--out", s(dir.path())]);
    assert!(!out.status.success());

    let data = dir.path().join("ood");
    ok(&imooe(&["generate", "--system", "dr", "--split", "ood", "--envs", "1", "--traj", "1", "--res", "16", "--out", s(&data)]));
    let config = dir.path().join("train.toml");
    std::fs::write(&config, "epochs = 0\n[model.expert]\nwidth = 8\nmodes = 4\nlayers = 1\nwindow = 4\n").unwrap();
    ok(&imooe(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&dir.path().join("run"))]));
    let ck = dir.path().join("run").join("final.h5");
    let out = imooe(&["eval", "--ckpt", s(&ck), "--data", s(&data), "--split", "id", "--out", s(&dir.path().join("r.json"))]);
    assert!(!out.status.success(), "split mismatch must fail");
}

#[test]
fn empty_recipe_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("empty.toml");
    std::fs::write(&recipe, "name = \"empty\"\nsystem = \"dr\"\nseeds = []\n").unwrap();
    let out = imooe(&["recipe", "run", s(&recipe), "--workdir", s(&dir.path().join("work"))]);
    ok(&out);
}
