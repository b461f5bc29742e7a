use std::fs;
use std::path::Path;
use std::process::Command;

use ncps_cli::compare::{compare, compare_files, format_delta, read_summary};
use ncps_cli::run::{run_experiment, HISTORY_HEADER, SUMMARY_HEADER};
use ncps_cli::ExperimentConfig;

const SMALL: &str = "\
num_images = 32
width = 16
height = 16
eval_every = 3
lambda_rampup = 2
";

fn text(dir: &Path, max_iter: usize, extra: &str) -> String {
    format!("{SMALL}max_iter = {max_iter}\n{extra}output_dir = {}\n", dir.display())
}

fn config(dir: &Path, max_iter: usize, extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&text(dir, max_iter, extra)).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn ablation_grid_has_sixteen_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = "method = ncps\nratio = 1/16, 1/8, 1/4, 1/2\nlambda = 0, 1.5\nn = 2, 3\neval_modes = sv\n";
    let cfg = config(tmp.path(), 0, grid);
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 16);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 17);
    assert_eq!(header(&tmp.path().join("summary.csv")), SUMMARY_HEADER.join(","));
    assert!(summary.contains("\nncps,3,1.5,1/16,sv,1,"));
}

#[test]
fn untrained_run_reports_initial_miou() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 0, "");
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 3);

    let d = ncps_core::synthdata::generate_dataset(&cfg.dataset).unwrap();
    let ens = ncps_core::segmodel::NetworkEnsemble::init(0, 3, 3, 4).unwrap();
    let initial = ncps_core::trainer::evaluate(&ens, &d.eval, None).unwrap();
    for row in &rows {
        assert_eq!(row.finals, vec![initial.get(row.eval_mode)]);
        assert_eq!(row.bests, row.finals);
    }
    let dir = tmp.path().join(rows[0].point.dir_name());
    let history = fs::read_to_string(dir.join("history_0.csv")).unwrap();
    assert_eq!(history, format!("{}\n", HISTORY_HEADER.join(",")));
    for f in ["best_0.ncps", "final_0.ncps", "curve_0.svg"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn identical_configs_give_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let extra = "method = ncps, ncps_cutmix, supervised_only\nrepeats = 2\n";
    let rows = run_experiment(&config(a.path(), 6, extra)).unwrap();
    run_experiment(&config(b.path(), 6, extra)).unwrap();
    let mut files = vec!["summary.csv".to_string()];
    for row in rows.iter().step_by(3) {
        for seed in 0..2 {
            files.push(format!("{}/history_{seed}.csv", row.point.dir_name()));
        }
    }
    assert_eq!(files.len(), 7);
    for f in &files {
        let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        assert_eq!(x, y, "{f}");
        assert!(!x.contains(&b'\r'));
    }
    let history = fs::read_to_string(a.path().join(&files[1])).unwrap();
    assert_eq!(history.lines().next().unwrap(), HISTORY_HEADER.join(","));
    let iters: Vec<&str> = history.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, ["3", "6"]);
    let svg = fs::read_to_string(a.path().join(rows[0].point.dir_name()).join("curve_0.svg")).unwrap();
    assert!(svg.contains(r#"version="1.1""#) && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 3);
}

fn summary_text(means: &[(&str, &str)]) -> String {
    let mut s = SUMMARY_HEADER.join(",") + "\n";
    for (mode, mean) in means {
        s.push_str(&format!("ncps,3,1.5,1/8,{mode},5,{mean},0.00,{mean},{mean},{mean}\n"));
    }
    s
}

#[test]
fn compare_reports_signed_point_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    fs::write(&a, summary_text(&[("mc", "64.61"), ("sv", "70.00")])).unwrap();
    fs::write(&b, summary_text(&[("mc", "66.18"), ("sv", "69.70")])).unwrap();
    let ab: Vec<String> = compare_files(&a, &b).unwrap().iter().map(|d| format_delta(d.hundredths())).collect();
    assert_eq!(ab, ["+1.57", "-0.30"]);
    let ba: Vec<i64> = compare_files(&b, &a).unwrap().iter().map(|d| d.hundredths()).collect();
    assert_eq!(ba, [-157, 30]);
    let same: Vec<String> = compare_files(&a, &a).unwrap().iter().map(|d| format_delta(d.hundredths())).collect();
    assert_eq!(same, ["+0.00", "+0.00"]);

    let c = tmp.path().join("c.csv");
    fs::write(&c, summary_text(&[("mc", "64.61"), ("single", "70.00")])).unwrap();
    assert!(compare(&read_summary(&a).unwrap(), &read_summary(&c).unwrap()).is_err());
}

#[test]
fn bad_configs_name_their_line() {
    let cases = [
        ("n = 3\nlambda = 1.5\nmomentum = 1.5\n", 3),
        ("# header\nratio = 3/2\n", 2),
        ("method = ncps\nn = 1\n", 2),
        ("eval_modes = single, vote\n", 1),
        ("seed = 1\nseed = 2\n", 2),
        ("width = 8\n", 1),
        ("just some text\n", 1),
    ];
    for (text, line) in cases {
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert_eq!(err.line(), Some(line), "{text:?}: {err}");
        assert!(err.to_string().starts_with(&format!("line {line}:")), "{err}");
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ncps");
    let tmp = tempfile::tempdir().unwrap();

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "n = 3\nlearning_rate = 0.1\n").unwrap();
    let out = Command::new(bin).args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let good = tmp.path().join("good.cfg");
    fs::write(&good, text(&blocker.join("out"), 0, "")).unwrap();
    let out = Command::new(bin).args(["run", good.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let outdir = tmp.path().join("ok");
    fs::write(&good, text(&outdir, 0, "")).unwrap();
    let out = Command::new(bin).args(["run", good.to_str().unwrap()]).env("NCPS_THREADS", "1").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = outdir.join("summary.csv");
    let out = Command::new(bin).args(["compare", summary.to_str().unwrap(), summary.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",+0.00")));

    let out = Command::new(bin).args(["dump-dataset", good.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let train_dir = outdir.join("dataset/train");
    assert_eq!(fs::read_dir(&train_dir).unwrap().count(), 64);
    let ppm = fs::read(train_dir.join("img_00000.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(ppm.len(), b"P6\n16 16\n255\n".len() + 16 * 16 * 3);
    assert_eq!(fs::read_dir(outdir.join("dataset/eval")).unwrap().count(), 2 * 7);
}
