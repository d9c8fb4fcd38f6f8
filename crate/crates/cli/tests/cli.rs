use std::path::Path;
use std::process::{Command, Output};

fn bsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bsnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let corpus = dir.join("corpus.txt");
    if !corpus.exists() {
        ok(&["gen-corpus", "--seed", "4", "--bytes", "30000", "--out", corpus.to_str().unwrap()]);
    }
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "model.kind=gru\nmodel.hidden=16\nmodel.layers=1\ndata.path=corpus.txt\n\
             train.epochs=5\ntrain.batch=8\ntrain.seq_len=16\ntrain.seed=3\n\
             block.h=4\nblock.w=4\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn train_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prune.enabled=true\nprune.freq=10\n");
    let ck = dir.path().join("model.bsnn");
    let report = dir.path().join("report.json");
    let curve = dir.path().join("curve.csv");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    ok(&[
        "train",
        &s(&cfg),
        "--checkpoint",
        &s(&ck),
        "--report",
        &s(&report),
        "--csv",
        &s(&curve),
    ]);
    let curve_text = read(&curve);
    assert!(curve_text.starts_with("iteration,epsilon_recurrent,epsilon_linear,block_sparsity\n"));
    let sparsity: Vec<f64> = curve_text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(sparsity.windows(2).all(|p| p[1] >= p[0]));
    assert!(*sparsity.last().unwrap() > 0.0);

    let again = dir.path().join("curve2.csv");
    ok(&["report", "curve", &s(&report), "--csv", &s(&again)]);
    assert_eq!(read(&again), curve_text);

    let eval = ok(&["eval", &s(&ck), &s(&dir.path().join("corpus.txt"))]);
    let losses: Vec<f64> = eval
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 2);
    assert!((losses[0] - losses[1]).abs() < 1e-6, "{losses:?}");

    let layers = ok(&["report", "layers", &s(&ck)]);
    assert!(layers.starts_with("index,name,role,rows,cols,block_sparsity,sparsity\n"));
    assert_eq!(layers.lines().count(), 1 + 7);

    let fanout = ok(&["report", "fanout", &s(&ck), "--bin-width", "16"]);
    let input_total: usize = fanout
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("input,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    let vocab: usize = layers.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(input_total, vocab);
}

#[test]
fn schedule_bench_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prune.enabled=true\nprune.theta=0.001\nprune.freq=10\n");
    let sched = ok(&["prune-schedule", cfg.to_str().unwrap()]);
    let eps: Vec<f64> = sched
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(eps.windows(2).all(|p| p[1] >= p[0]));
    assert!(eps[0] == 0.0 && *eps.last().unwrap() > 0.0);

    let bench = ok(&[
        "bench", "--rows", "32", "--cols", "32", "--blocks", "4x4", "--batches", "1,4", "--reps", "3",
    ]);
    assert!(bench.starts_with("kernel,rows,cols,batch,block_h,block_w,sparsity,wall_time,speedup_vs_dense,footprint_ratio\n"));
    assert_eq!(bench.lines().count(), 1 + 6);

    let grid = dir.path().join("grid.txt");
    std::fs::write(&grid, "prune.theta_scale=0.5,2\n").unwrap();
    let sweep = ok(&["sweep", cfg.to_str().unwrap(), grid.to_str().unwrap()]);
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let sp: Vec<f64> = rows.iter().map(|r| r.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(sp[0] <= sp[1]);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "/nonexistent/run.cfg"],
        vec!["eval", "/nonexistent.bsnn", "/nonexistent.txt"],
        vec!["bench", "--reps", "2", "--rows", "8", "--cols", "8", "--blocks", "3x3"],
    ] {
        let out = bsnn(&args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
    let bad = write_config(dir.path(), "model.colour=red\n");
    let out = bsnn(&["train", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.colour"));

    let garbage = dir.path().join("garbage.bsnn");
    std::fs::write(&garbage, b"BSNN1\nnonsense\n").unwrap();
    let out = bsnn(&["report", "layers", garbage.to_str().unwrap()]);
    assert!(!out.status.success());
}
