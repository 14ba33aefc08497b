use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use hitl_gan::oracle::{OracleConfig, ResponseMode};
use hitl_gan::rundir::{read_json, Checkpoint, RunDir};
use hitl_gan::trainer::training_prior;
use hitl_gan::{ClassLabel, Question, SimulatedOracle, TrainConfig};
use hitl_gan_service::{spawn, system_clock, ServiceClient, ServiceConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hitl-gan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_csv(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn landscape_file(dir: &Path, name: &str, cfg: &OracleConfig) -> PathBuf {
    write(dir, name, &serde_json::to_string_pretty(cfg).unwrap())
}

fn service(dir: &Path) -> hitl_gan_service::RunningService {
    spawn(
        ServiceConfig {
            listen: "127.0.0.1:0".parse().unwrap(),
            data_dir: dir.to_path_buf(),
            lease_timeout: Duration::from_secs(600),
            min_raters: 5,
        },
        system_clock(),
    )
    .unwrap()
}

#[test]
fn train_with_paper_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", "");
    let out = dir.path().join("run");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rd = RunDir::create(&out).unwrap();
    let history = rd.read_history().unwrap();
    assert_eq!(history.len(), 4);
    assert!(history.iter().all(|r| r.queries == 500 && r.objectives_after.is_some()));
    assert_eq!(rd.latest_checkpoint().unwrap().unwrap().iteration, 4);
    for f in ["before.csv", "after.csv"] {
        let (header, rows) = read_csv(&std::fs::read(out.join(f)).unwrap());
        assert_eq!(header, ["x1", "x2", "class"]);
        assert_eq!(rows.len(), 50);
    }
    // Rerunning a finished run is a no-op.
    let again = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&again), 0);
    assert_eq!(rd.read_history().unwrap().len(), 4);
}

#[test]
fn train_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--config", s(&dir.path().join("missing.toml")), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
    assert_eq!(code(&run(&["train", "--out", "x"])), 2);

    let bad = write(dir.path(), "bad.toml", "[train]\nalpha = -1.0\n");
    assert_eq!(code(&run(&["train", "--config", s(&bad), "--out", s(&dir.path().join("r2"))])), 1);

    let cfg = write(dir.path(), "exp.toml", "");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let out = dir.path().join("svc");
    let o = run(&["train", "--config", s(&cfg), "--oracle", &url, "--out", s(&out)]);
    assert_eq!(code(&o), 4);
    assert!(out.join("pending.json").exists());
    assert!(out.join("checkpoints/iter-00000.json").exists());
}

#[test]
fn train_through_service_matches_simulated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", "[train]\niterations = 2\nseed = 4\n");
    let sim_out = dir.path().join("sim");
    assert_eq!(code(&run(&["train", "--config", s(&cfg), "--out", s(&sim_out)])), 0);

    let svc = service(&dir.path().join("queue"));
    let url = svc.url();
    let out = dir.path().join("human");
    let mut pauses = 0;
    loop {
        let o = run(&["train", "--config", s(&cfg), "--oracle", &url, "--out", s(&out)]);
        match code(&o) {
            0 => break,
            3 => {
                pauses += 1;
                let r = run(&["rate", "--service", &url, "--config", s(&cfg), "--rater", "bot"]);
                assert_eq!(code(&r), 0);
                assert!(String::from_utf8_lossy(&r.stdout).contains("answered 500 tasks"));
            }
            c => panic!("exit {c}: {}", String::from_utf8_lossy(&o.stderr)),
        }
    }
    assert_eq!(pauses, 2);
    let a = RunDir::create(&sim_out).unwrap().read_history().unwrap();
    let b = RunDir::create(&out).unwrap().read_history().unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.x_hat, y.x_hat);
        assert_eq!(x.theta_grad_norm, y.theta_grad_norm);
    }
    let ca: Checkpoint = read_json(&sim_out.join("checkpoints/iter-00002.json")).unwrap();
    let cb: Checkpoint = read_json(&out.join("checkpoints/iter-00002.json")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(std::fs::read(sim_out.join("after.csv")).unwrap(), std::fs::read(out.join("after.csv")).unwrap());
}

#[test]
fn map_grid_rows_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["map", "--field", "naturalness", "--bounds", "-3:3,-3:3", "--resolution", "7x7"]);
    assert_eq!(code(&o), 0);
    let (header, rows) = read_csv(&o.stdout);
    assert_eq!(header, ["x1", "x2", "kind", "class", "posterior", "continuous"]);
    assert_eq!(rows.len(), 49);
    let oracle = SimulatedOracle::reference();
    for row in &rows {
        let x = [row[0].parse::<f64>().unwrap(), row[1].parse::<f64>().unwrap()];
        let cont: f64 = row[5].parse().unwrap();
        assert_eq!(cont, oracle.posterior(&x, Question::Naturalness).unwrap());
        let rated = oracle.rate_absolute(&x, Question::Naturalness).unwrap();
        assert_eq!(row[4], format!("{rated:.2}"));
    }
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("-3", "-3"));
    assert_eq!((rows[48][0].as_str(), rows[48][1].as_str()), ("3", "3"));

    let one = landscape_file(dir.path(), "one.json", &OracleConfig::constant(1.0, 2, ResponseMode::FiveLevel));
    let cfg = write(dir.path(), "one.toml", &format!("oracle = {:?}\n", s(&one)));
    let out = dir.path().join("map.csv");
    let o = run(&["map", "--field", "class:1", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let (_, rows) = read_csv(&std::fs::read(&out).unwrap());
    assert_eq!(rows.len(), 49);
    assert!(rows.iter().all(|r| r[4] == "1.00" && r[3] == "1"));

    assert_eq!(code(&run(&["map", "--field", "class:7"])), 1);
    assert_eq!(code(&run(&["map", "--field", "naturalness", "--bounds", "3:-3,0:1"])), 1);
}

#[test]
fn map_through_service_needs_five_raters() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(&dir.path().join("queue"));
    let url = svc.url();
    let args = ["map", "--field", "class:0", "--resolution", "3x3", "--oracle", &url];
    assert_eq!(code(&run(&args)), 3);
    for r in 0..4 {
        assert_eq!(code(&run(&["rate", "--service", &url, "--rater", &format!("r{r}")])), 0);
    }
    assert_eq!(code(&run(&args)), 3);
    assert_eq!(code(&run(&["rate", "--service", &url, "--rater", "r4"])), 0);
    let o = run(&args);
    assert_eq!(code(&o), 0);
    let (_, rows) = read_csv(&o.stdout);
    assert_eq!(rows.len(), 9);
    // Identical deterministic raters: the mean equals one rater's level.
    let oracle = SimulatedOracle::reference();
    for row in &rows {
        let x = [row[0].parse::<f64>().unwrap(), row[1].parse::<f64>().unwrap()];
        let q = Question::ClassAcceptability(ClassLabel(0));
        assert_eq!(row[4], format!("{:.2}", oracle.rate_absolute(&x, q).unwrap()));
        assert_eq!(row[5], "");
    }
}

fn checkpoint_for(dir: &Path, cfg: &Path) -> PathBuf {
    let out = dir.join("run");
    assert_eq!(code(&run(&["train", "--config", s(cfg), "--out", s(&out)])), 0);
    out.join("checkpoints/iter-00004.json")
}

#[test]
fn gradient_arrows_point_uphill() {
    let dir = tempfile::tempdir().unwrap();
    let smooth = OracleConfig::reference().with_mode(ResponseMode::Continuous);
    let land = landscape_file(dir.path(), "smooth.json", &smooth);
    let cfg = write(dir.path(), "exp.toml", &format!("oracle = {:?}\n", s(&land)));
    let ck = checkpoint_for(dir.path(), &cfg);
    let o = run(&["gradients", "--checkpoint", s(&ck), "--config", s(&cfg), "-R", "500"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&o.stdout);
    assert_eq!(header, ["x1", "x2", "class", "dS_dx1", "dS_dx2", "dC_dx1", "dC_dx2"]);
    assert_eq!(rows.len(), TrainConfig::default().n_data);

    let oracle = SimulatedOracle::new(smooth).unwrap();
    let (mut agree, mut total) = (0, 0);
    for row in &rows {
        let v: Vec<f64> = row.iter().map(|c| c.parse().unwrap()).collect();
        let x = &v[0..2];
        let class = ClassLabel(v[2] as usize);
        for (q, est) in [(Question::Naturalness, &v[3..5]), (Question::ClassAcceptability(class), &v[5..7])] {
            let g = oracle.field(q).unwrap().gradient(x).unwrap();
            if g.iter().map(|a| a * a).sum::<f64>().sqrt() > 1e-3 {
                total += 1;
                agree += usize::from(g[0] * est[0] + g[1] * est[1] > 0.0);
            }
        }
    }
    assert!(total > 0);
    assert!(agree as f64 >= 0.9 * total as f64, "{agree}/{total}");
}

#[test]
fn zero_field_gradients_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", "");
    let ck = checkpoint_for(dir.path(), &cfg);
    let zero = landscape_file(dir.path(), "zero.json", &OracleConfig::constant(0.0, 2, ResponseMode::FiveLevel));
    let zcfg = write(dir.path(), "zero.toml", &format!("oracle = {:?}\n", s(&zero)));
    let o = run(&["gradients", "--checkpoint", s(&ck), "--config", s(&zcfg), "-R", "20"]);
    assert_eq!(code(&o), 0);
    let (_, rows) = read_csv(&o.stdout);
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r[3..].iter().all(|c| c.parse::<f64>().unwrap() == 0.0)));
    // The rows sit at the checkpoint's generated data.
    let params = Checkpoint::load(&ck).unwrap().params().unwrap();
    let prior = training_prior(&TrainConfig::default(), params.arch(), 0).unwrap();
    let x = prior.generate(&params).unwrap();
    assert_eq!(rows[7][0].parse::<f64>().unwrap(), x[7][0]);

    assert_eq!(code(&run(&["gradients", "--checkpoint", s(&dir.path().join("nope.json"))])), 1);
}

#[test]
fn pca_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("f1,f2,f3,class\n");
    for i in 0..40 {
        let t = i as f64 * 0.37;
        let label = if i % 2 == 0 { "a" } else { "b" };
        text.push_str(&format!("{},{},{},{label}\n", t.sin() * 3.0, t.cos() + 0.2 * t, 0.5 * t.sin() - t.cos(), ));
    }
    let data = write(dir.path(), "data.csv", &text);
    let model = dir.path().join("pca.json");
    assert_eq!(code(&run(&["pca", "fit", "--data", s(&data), "--components", "3", "--out", s(&model)])), 0);
    let y = dir.path().join("y.csv");
    assert_eq!(code(&run(&["pca", "transform", "--model", s(&model), "--data", s(&data), "--out", s(&y)])), 0);
    let back = run(&["pca", "inverse", "--model", s(&model), "--data", s(&y)]);
    assert_eq!(code(&back), 0);
    let (_, orig) = read_csv(text.as_bytes());
    let (header, rows) = read_csv(&back.stdout);
    assert_eq!(header, ["f1", "f2", "f3", "class"]);
    for (a, b) in orig.iter().zip(&rows) {
        for j in 0..3 {
            assert!((a[j].parse::<f64>().unwrap() - b[j].parse::<f64>().unwrap()).abs() < 1e-9);
        }
        assert_eq!(a[3], b[3]);
    }
    assert_eq!(code(&run(&["pca", "fit", "--data", s(&data), "--components", "4", "--out", s(&model)])), 1);
}

#[test]
fn serve_reads_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bin()
        .arg("serve")
        .env("HITL_GAN_LISTEN", "127.0.0.1:0")
        .env("HITL_GAN_DATA_DIR", dir.path())
        .env("HITL_GAN_MIN_RATERS", "2")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let client = ServiceClient::new(&url).unwrap();
    client.health().unwrap();
    let q = hitl_gan::queue::AbsoluteQuery::new("p", vec![0.0, 0.0], Question::Naturalness);
    let id = client.enqueue(&[q.into()], None).unwrap().batch_id;
    assert_eq!(client.task(&format!("{id}.0")).unwrap().min_raters, 2);
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(dir.path().join("events.jsonl").exists());

    let status = run(&["status", "--service", &url, &id]);
    assert_eq!(code(&status), 4);
}
