#![allow(dead_code)]

use std::path::Path;

use soupkit::cli::RunConfig;

/// Default config shrunk for quick end-to-end runs.
pub fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.n_per_class = 100;
    cfg.dataset.splits = [150, 100, 60, 80];
    cfg.zoo.epochs = 20;
    cfg.candidates.count = 40;
    cfg.budgets.max = 6;
    cfg.output_dir = out.to_path_buf();
    cfg
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.to_json()).unwrap();
}
