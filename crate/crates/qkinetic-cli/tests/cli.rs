use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn qk(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkinetic"))
        .args(args)
        .current_dir(cwd)
        .env_remove("QKINETIC_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn boardgame_tabulation_has_42_rows_summing_to_120() {
    let tmp = TempDir::new().unwrap();
    let o = qk(tmp.path(), &["boardgame", "--k", "5", "--tabulate", "--out-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(tmp.path().join("out/classes_k5.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("skeleton_id,class_size,canonical_mu,inequalities"));
    let sizes: Vec<usize> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(sizes.len(), 42);
    assert_eq!(sizes.iter().sum::<usize>(), 120);
}

#[test]
fn collide_check_maxwellian_reports_small_defects() {
    let tmp = TempDir::new().unwrap();
    let o = qk(tmp.path(), &["collide-check", "--maxwellian", "--out-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(tmp.path().join("out/report.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(names, ["mass_defect", "momentum_defect", "energy_defect", "annihilation_ratio"]);
    for r in &rows {
        let (v, t): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!(v <= t, "{r:?}");
        assert_eq!(&r[3], "true");
    }
}

#[test]
fn empty_config_is_a_line_numbered_config_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.cfg"), "").unwrap();
    fs::write(tmp.path().join("comments.cfg"), "# nothing here\n\n# still nothing\n").unwrap();
    let o = qk(tmp.path(), &["solve", "--config", "empty.cfg", "--out-dir", "out"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("empty.cfg:1:"), "{}", stderr(&o));
    let o = qk(tmp.path(), &["solve", "--config", "comments.cfg", "--out-dir", "out"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("comments.cfg:3:"), "{}", stderr(&o));
}

#[test]
fn config_errors_point_at_the_line() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("n_v = 8\nbogus = 1\n", "unknown.cfg", ":2:"),
        ("# header\nn_v 8\n", "noeq.cfg", ":2:"),
        ("n_v = 8\nn_v = 9\n", "dup.cfg", ":2:"),
        ("dt = 0.1\nsplitting = yoshida\n", "choice.cfg", ":2:"),
        ("n_v = eight\n", "parse.cfg", ":1:"),
        ("subcommand = boardgame\n", "other.cfg", ":1:"),
    ];
    for (body, name, tag) in cases {
        fs::write(tmp.path().join(name), body).unwrap();
        let o = qk(tmp.path(), &["solve", "--config", name, "--out-dir", "out"]);
        assert_eq!(code(&o), 2, "{name}");
        assert!(stderr(&o).contains(&format!("{name}{tag}")), "{name}: {}", stderr(&o));
    }
}

#[test]
fn stochastic_runs_need_a_seed() {
    let tmp = TempDir::new().unwrap();
    for args in [
        vec!["quasifree", "--set", "task=walk"],
        vec!["bbgky-ladder"],
        vec!["boardgame", "--set", "mode=region", "--k", "3"],
        vec!["illposed", "--set", "m=8", "--set", "probe=surrogate"],
    ] {
        let mut a = args.clone();
        a.extend(["--out-dir", "out"]);
        let o = qk(tmp.path(), &a);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    }
    // deterministic runs go through without one
    let o = qk(tmp.path(), &["quasifree", "--set", "task=derangements", "--out-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read(tmp.path().join("out/derangements.csv")).contains("\n4,9\n"));
}

#[test]
fn manifest_replays_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let runs: [&[&str]; 3] = [
        &["quasifree", "--set", "task=walk", "--set", "n=500", "--set", "trials=300", "--seed", "11"],
        &["boardgame", "--set", "mode=region", "--k", "4", "--set", "points=5000", "--seed", "5"],
        &["illposed", "--set", "m=8", "--set", "probe=surrogate", "--set", "probe_points=2", "--seed", "9"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let first = format!("a{i}");
        let second = format!("b{i}");
        let mut a = args.to_vec();
        a.extend(["--threads", "1", "--out-dir", &first]);
        let o = qk(tmp.path(), &a);
        assert!(matches!(code(&o), 0 | 1), "{}", stderr(&o));
        let manifest = tmp.path().join(&first).join("manifest.txt");
        let text = read(&manifest);
        assert!(text.contains("# qkinetic ") && text.contains("# wall_time_s = "));
        let replay = qk(
            tmp.path(),
            &[args[0], "--config", manifest.to_str().unwrap(), "--threads", "1", "--out-dir", &second],
        );
        assert_eq!(code(&replay), code(&o));
        let outputs: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("# output = ")).collect();
        assert!(!outputs.is_empty());
        for f in outputs {
            let x = fs::read(tmp.path().join(&first).join(f)).unwrap();
            let y = fs::read(tmp.path().join(&second).join(f)).unwrap();
            assert!(x == y, "{f} differs on replay");
        }
    }
}

#[test]
fn nothing_is_written_outside_out_dir() {
    let tmp = TempDir::new().unwrap();
    let runs: [&[&str]; 4] = [
        &["boardgame", "--k", "3", "--tabulate", "--out-dir", "out"],
        &["illposed", "--out-dir", "out"],
        &["solve", "--set", "t_end=0.1", "--out-dir", "out"],
        &["quasifree", "--set", "task=derangements", "--out-dir", "out"],
    ];
    for args in runs {
        let o = qk(tmp.path(), args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let top: Vec<String> =
        fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(top, ["out"]);
}

#[test]
fn blow_up_exits_with_the_guard_code() {
    let tmp = TempDir::new().unwrap();
    let o = qk(
        tmp.path(),
        &[
            "solve", "--set", "mass=400", "--set", "dt=1", "--set", "t_end=20", "--set", "splitting=lie",
            "--set", "substep=euler", "--set", "conservative_projection=false", "--set", "n_omega=2",
            "--out-dir", "out",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(read(tmp.path().join("out/manifest.txt")).contains("# status = error: numerical guard"));
}

#[test]
fn probe_inside_its_noise_is_inconclusive() {
    let tmp = TempDir::new().unwrap();
    let base = ["illposed", "--set", "m=8", "--set", "probe=surrogate", "--set", "probe_points=2", "--seed", "4"];
    let mut a = base.to_vec();
    a.extend(["--out-dir", "first"]);
    let o = qk(tmp.path(), &a);
    // the product form is off by far more than the band, see the ill-posedness notes
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let err = stderr(&o);
    let rel: f64 = err.split("relative error ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let band = format!("band={rel}");
    let mut a = base.to_vec();
    a.extend(["--set", &band, "--out-dir", "second"]);
    let o = qk(tmp.path(), &a);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn thread_count_from_flag_or_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qkinetic"))
        .args(["boardgame", "--k", "2", "--out-dir", "out"])
        .current_dir(tmp.path())
        .env("QKINETIC_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(read(tmp.path().join("out/manifest.txt")).contains("# threads = 2"));
    let o = qk(tmp.path(), &["--threads", "1", "boardgame", "--k", "2", "--out-dir", "out"]);
    assert_eq!(code(&o), 0);
    assert!(read(tmp.path().join("out/manifest.txt")).contains("# threads = 1"));
    let o = Command::new(env!("CARGO_BIN_EXE_qkinetic"))
        .args(["boardgame", "--out-dir", "out"])
        .current_dir(tmp.path())
        .env("QKINETIC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn help_documents_csv_schemas() {
    let tmp = TempDir::new().unwrap();
    for (sub, header) in [
        ("collide-check", "quantity,value,threshold,pass"),
        ("solve", "t,mass,px,py,pz,energy,entropy,min_f,h_norm"),
        ("bbgky-ladder", "eps,q_norm,diff_norm"),
        ("quasifree", "n,trials,mean_crossings,stderr,predicted,mean_sq_displacement"),
        ("boardgame", "skeleton_id,class_size,canonical_mu,inequalities"),
        ("illposed", "ratio,M,s,s1,delta"),
    ] {
        let o = qk(tmp.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0);
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains(header), "{sub}");
        assert!(text.contains("Exit codes"), "{sub}");
    }
}
