mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::small_config;
use soupkit::analysis::experiments::{ScatterTable, SweepReport};
use soupkit::analysis::report::{read_report, Format};
use soupkit::cli::{Overrides, Session, WinnerRow, ZOO_MANIFEST};
use soupkit::io::load_zoo;
use soupkit::select::Method;

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_pipeline(root: &Path, format: Format) {
    let ov = Overrides {
        format: Some(format),
        ..Overrides::default()
    };
    Session::new(small_config(root), &ov).unwrap().pipeline().unwrap();
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for format in [Format::Csv, Format::Json] {
        run_pipeline(a.path(), format);
        run_pipeline(b.path(), format);
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs between runs");
    }
    for name in ["greedy", "radin", "oracle", "sweep", "taylor", "scatter", "variance"] {
        assert!(sa.contains_key(&format!("reports/{name}.csv")), "{name}.csv");
        assert!(sa.contains_key(&format!("reports/{name}.json")), "{name}.json");
    }
}

#[test]
fn default_shape_sweep_has_four_rows_per_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.budgets.max = 25;
    let mut s = Session::new(cfg, &Overrides::default()).unwrap();
    s.gen_data().unwrap();
    s.train_zoo().unwrap();
    s.cache().unwrap();
    s.sweep().unwrap();
    let sweep: SweepReport = read_report(&dir.path().join("reports/sweep.csv"), Format::Csv).unwrap();
    assert_eq!(sweep.rows.len(), 25 * 4);
    for lambda in [0.0, 1.0] {
        let series = sweep.series(Method::Radin, Some(lambda));
        assert_eq!(series.len(), 25);
        assert!(series.windows(2).all(|w| w[1].val_acc >= w[0].val_acc));
    }
    // greedy holds its terminal value once B >= N
    let greedy = sweep.series(Method::Greedy, None);
    assert!(greedy[8..].iter().all(|r| r.val_acc == greedy[7].val_acc));
}

#[test]
fn radin_b1_lambda1_names_uniform_soup() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let n = cfg.zoo.n_models;
    Session::new(cfg.clone(), &Overrides::default()).unwrap().pipeline().unwrap();
    let ov = Overrides {
        budget: Some(1),
        lambda: Some(1.0),
        ..Overrides::default()
    };
    Session::new(cfg, &ov).unwrap().radin().unwrap();
    let rows: Vec<WinnerRow> = read_report(&dir.path().join("reports/radin.csv"), Format::Csv).unwrap();
    let want: Vec<String> = (0..n).map(|k| k.to_string()).collect();
    assert_eq!(rows[0].winner, want.join("-"));
    assert_eq!((rows[0].budget_allowed, rows[0].budget_spent), (1, 1));
}

#[test]
fn gen_data_twice_is_identical_and_zoo_shares_arch() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let mut cfg = small_config(d);
        cfg.zoo.n_models = 5;
        let mut s = Session::new(cfg, &Overrides::default()).unwrap();
        s.gen_data().unwrap();
        s.train_zoo().unwrap();
    }
    for split in ["pretrain", "finetune", "validation", "test"] {
        let rel = format!("data/{split}.ds");
        assert_eq!(std::fs::read(a.path().join(&rel)).unwrap(), std::fs::read(b.path().join(&rel)).unwrap());
    }
    let (manifest, zoo) = load_zoo(&a.path().join(ZOO_MANIFEST)).unwrap();
    assert_eq!(zoo.len(), 5);
    assert!(zoo.iter().all(|w| w.arch_hash() == manifest.arch.hash()));
}

#[test]
fn scatter_and_greedy_reports_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), Format::Json);
    let scatter: ScatterTable = read_report(&dir.path().join("reports/scatter.json"), Format::Json).unwrap();
    assert_eq!(scatter.rows.len(), 40);
    assert!(scatter.rows.iter().all(|r| (2..=7).contains(&r.size)));

    let (manifest, _) = load_zoo(&dir.path().join(ZOO_MANIFEST)).unwrap();
    let best = manifest.models.iter().filter_map(|m| m.val_acc).fold(f64::MIN, f64::max);
    let greedy: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("reports/greedy.json")).unwrap()).unwrap();
    let won = greedy["winner"]["true_val"]["accuracy"].as_f64().unwrap();
    assert!(won >= best, "greedy {won} < best individual {best}");
}
