//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Run with `cargo test -p soupkit --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use soupkit::analysis::stats::{mann_whitney_u, spearman, spearman_permutation_p};
use soupkit::analysis::taylor::{halving_epsilons, random_directions, taylor_check};
use soupkit::cli::{load_all, selection_masks, Loaded, Overrides, RunConfig, Session};
use soupkit::io::{gen_dataset, DatasetSpec};
use soupkit::soup::evaluate_weights;
use soupkit::{
    build_cache, ensemble_eval, enumerate_all, evaluate_soup, greedy_soup, radin, sample_candidates_mc,
    sgd_train, uniform_mix, Activation, ArchDescriptor, Hyperparams, MixVector, PriorConfig,
    SubsetMask, WeightVector,
};

// tolerances and limits
const TAYLOR_RATIO: (f64, f64) = (0.15, 0.35);
const TAYLOR_LINEAR_GAP: f64 = 1e-5;
const LINEAR_LOSS_GAP: f64 = 1e-5;
const SPEARMAN_MIN: f64 = 0.3;
const PERMUTATION_P_MAX: f64 = 0.01;
const PERMUTATIONS: usize = 9999;
const MWU_P_MAX: f64 = 0.01;
const SPEARMAN_EXAMPLE: f64 = 0.7;
const EXACT: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut o = f();
    let elapsed = t.elapsed();
    if elapsed > limit {
        o.pass = false;
        o.detail = format!("{} [over time limit {:?}]", o.detail, limit);
    }
    println!(
        "{} [{id}] {name}: {} ({:.2}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    o.pass
}

fn desk_zoo(cfg: RunConfig, root: &Path) -> Loaded {
    let mut cfg = cfg;
    cfg.output_dir = root.to_path_buf();
    let mut s = Session::new(cfg, &Overrides::default()).unwrap();
    s.gen_data().unwrap();
    s.train_zoo().unwrap();
    s.cache().unwrap();
    load_all(&s.cfg, &s.ws).unwrap()
}

fn blob_spec(n_features: usize, n_classes: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_classes,
        n_features,
        n_per_class: 100,
        blob_std: 1.0,
        seed,
        splits: [100, 100, 60, 40],
    }
}

fn taylor() -> Outcome {
    let spec = blob_spec(4, 3, 31);
    let data = gen_dataset(&spec).unwrap().validation;
    let n = 8;
    let p = MixVector::new(vec![1.0 / n as f64; n]).unwrap();
    let eps = halving_epsilons(1e-1, 4);

    let arch = ArchDescriptor::new(vec![4, 8, 3], Activation::Tanh).unwrap();
    let init = WeightVector::random_init(&arch, 17);
    let deltas = random_directions(arch.param_count(), n, 23);
    let r = taylor_check(&arch, &init, &deltas, &p, &eps, &data).unwrap();
    let tail: Vec<Option<f64>> = r.tail_ratios(2).to_vec();
    let quad_ok = tail.iter().all(|x| x.is_some_and(|v| v >= TAYLOR_RATIO.0 && v <= TAYLOR_RATIO.1));

    let lin = ArchDescriptor::new(vec![4, 3], Activation::Identity).unwrap();
    let lin_init = WeightVector::random_init(&lin, 17);
    let lin_deltas = random_directions(lin.param_count(), n, 23);
    let lr = taylor_check(&lin, &lin_init, &lin_deltas, &p, &eps, &data).unwrap();
    let max_lin = lr.gaps.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: quad_ok && max_lin <= TAYLOR_LINEAR_GAP,
        detail: format!(
            "tanh decay ratios {:?} (last two in [{}, {}]); linear max gap {:.3e} <= {:e}",
            r.decay_ratios, TAYLOR_RATIO.0, TAYLOR_RATIO.1, max_lin, TAYLOR_LINEAR_GAP
        ),
    }
}

fn greedy_guarantee() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut all = true;
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.dataset.seed = 1000 + seed;
        cfg.pretrain.seed = 2000 + seed;
        cfg.zoo.base_seed = 3000 + 10 * seed;
        let l = desk_zoo(cfg, dir.path());
        let best = l
            .zoo
            .iter()
            .map(|w| evaluate_weights(&l.manifest.arch, w, &l.val).unwrap().accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        let r = greedy_soup(&l.manifest.arch, &l.zoo, &l.cache, &l.val, None).unwrap();
        let won = r.winner.true_val().unwrap().accuracy;
        all &= won >= best && r.budget.spent() == l.zoo.len();
        worst = worst.min(won - best);
    }
    Outcome {
        pass: all,
        detail: format!("5 zoos (N=8), min(greedy val - best individual val) = {worst:+.4}"),
    }
}

fn radin_exhaustive() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.zoo.n_models = 4;
    let l = desk_zoo(cfg, dir.path());
    let arch = &l.manifest.arch;
    let masks = enumerate_all(4).unwrap();
    let r = radin(arch, &l.zoo, &l.cache, &l.val, &masks, 15, PriorConfig::none()).unwrap();

    // brute force: max accuracy, then larger mask, then lexicographically smaller
    let mut best: Option<(f64, SubsetMask)> = None;
    for m in &masks {
        let acc = evaluate_soup(arch, &l.zoo, &uniform_mix(m, 4).unwrap(), &l.val).unwrap().accuracy;
        let better = match &best {
            None => true,
            Some((ba, bm)) => {
                acc > *ba || (acc == *ba && (m.len() > bm.len() || (m.len() == bm.len() && m.members() < bm.members())))
            }
        };
        if better {
            best = Some((acc, m.clone()));
        }
    }
    let (acc, mask) = best.unwrap();
    Outcome {
        pass: r.winner.mask() == &mask && r.budget.spent() == 15,
        detail: format!("radin winner {} vs brute force {} (val acc {acc:.4})", r.winner.mask(), mask),
    }
}

fn prior_b1(l: &Loaded, cfg: &RunConfig) -> Outcome {
    let n = l.zoo.len();
    let masks = selection_masks(cfg, n, cfg.candidates.seed).unwrap();
    let r = radin(&l.manifest.arch, &l.zoo, &l.cache, &l.val, &masks, 1, PriorConfig::new(1.0).unwrap()).unwrap();
    Outcome {
        pass: r.winner.mask() == &SubsetMask::full(n).unwrap() && r.budget.spent() == 1,
        detail: format!("{} candidates incl. uniform, B=1 lambda=1 winner {}", masks.len(), r.winner.mask()),
    }
}

fn correlation(l: &Loaded, cfg: &RunConfig) -> Outcome {
    let n = l.zoo.len();
    let arch = &l.manifest.arch;
    let masks = sample_candidates_mc(n, 200, cfg.candidates.seed).unwrap();
    let mut approx = Vec::with_capacity(masks.len());
    let mut truth = Vec::with_capacity(masks.len());
    for m in &masks {
        let p = uniform_mix(m, n).unwrap();
        approx.push(ensemble_eval(&l.cache, &p).unwrap().accuracy);
        truth.push(evaluate_soup(arch, &l.zoo, &p, &l.val).unwrap().accuracy);
    }
    let rho = spearman(&approx, &truth).unwrap();
    let p = spearman_permutation_p(&approx, &truth, PERMUTATIONS, 1).unwrap();
    Outcome {
        pass: rho > SPEARMAN_MIN && p < PERMUTATION_P_MAX,
        detail: format!(
            "200 MC candidates: spearman {rho:.4} > {SPEARMAN_MIN}, permutation p {p:.2e} < {PERMUTATION_P_MAX}"
        ),
    }
}

fn monotone(l: &Loaded, cfg: &RunConfig) -> Outcome {
    let n = l.zoo.len();
    let masks = selection_masks(cfg, n, cfg.candidates.seed).unwrap();
    let mut ok = true;
    let mut finals = Vec::new();
    for lambda in [0.0, 1.0] {
        let prior = PriorConfig::new(lambda).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for b in 1..=25 {
            let r = radin(&l.manifest.arch, &l.zoo, &l.cache, &l.val, &masks, b, prior).unwrap();
            let acc = r.winner.true_val().unwrap().accuracy;
            ok &= acc >= prev && r.budget.spent() == b.min(masks.len());
            prev = acc;
        }
        finals.push(prev);
    }
    Outcome {
        pass: ok,
        detail: format!("B=1..25, lambda in {{0, 1}}, final val acc {finals:.4?}"),
    }
}

fn linear_identity() -> Outcome {
    let spec = blob_spec(5, 3, 77);
    let splits = gen_dataset(&spec).unwrap();
    let arch = ArchDescriptor::new(vec![5, 3], Activation::Identity).unwrap();
    let init = sgd_train(
        &arch,
        &WeightVector::random_init(&arch, 5),
        &splits.pretrain,
        &hp(0.05, 2, 9, 0.0),
    )
    .unwrap();
    let n = 8;
    let zoo: Vec<WeightVector> = (0..n)
        .map(|k| sgd_train(&arch, &init, &splits.finetune, &hp(0.01 * (1 + k % 3) as f64, 5, 40 + k as u64, 0.05)).unwrap())
        .collect();
    let ids: Vec<String> = (0..n).map(|k| format!("lin{k}")).collect();
    let cache = build_cache(&arch, &zoo, &ids, &splits.validation).unwrap();
    let masks = sample_candidates_mc(n, 50, 3).unwrap();
    let mut worst: f64 = 0.0;
    for m in &masks {
        let p = uniform_mix(m, n).unwrap();
        let e = ensemble_eval(&cache, &p).unwrap().mean_loss;
        let s = evaluate_soup(&arch, &zoo, &p, &splits.validation).unwrap().mean_loss;
        worst = worst.max((e - s).abs());
    }
    Outcome {
        pass: worst <= LINEAR_LOSS_GAP,
        detail: format!("50 masks, max |ensemble loss - soup loss| = {worst:.3e} <= {LINEAR_LOSS_GAP:e}"),
    }
}

fn hp(lr: f64, epochs: usize, seed: u64, noise: f64) -> Hyperparams {
    Hyperparams {
        learning_rate: lr,
        weight_decay: 0.0,
        epochs,
        batch_size: 16,
        seed,
        input_noise_std: noise,
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        for format in [soupkit::analysis::report::Format::Csv, soupkit::analysis::report::Format::Json] {
            let mut cfg = RunConfig::default();
            cfg.output_dir = d.path().to_path_buf();
            let ov = Overrides {
                format: Some(format),
                ..Overrides::default()
            };
            Session::new(cfg, &ov).unwrap().pipeline().unwrap();
        }
    }
    let (a, b) = (tree(dirs[0].path()), tree(dirs[1].path()));
    let reports = a.keys().filter(|k| k.starts_with("reports")).count();
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    Outcome {
        pass: a.len() == b.len() && differing.is_empty() && reports == 14,
        detail: format!("{} files ({reports} CSV/JSON reports), {} differ", a.len(), differing.len()),
    }
}

fn statistics() -> Outcome {
    let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
    let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let b: Vec<f64> = (100..110).map(|i| i as f64).collect();
    let mw = mann_whitney_u(&a, &b).unwrap();
    let rho_ok = (rho - SPEARMAN_EXAMPLE).abs() <= EXACT;
    Outcome {
        pass: rho_ok && mw.p_value < MWU_P_MAX,
        detail: format!(
            "spearman example = {rho} (required {SPEARMAN_EXAMPLE}: {}); Mann-Whitney separated groups p = {:.3e} < {MWU_P_MAX} ({})",
            if rho_ok { "ok" } else { "mismatch" },
            mw.p_value,
            if mw.p_value < MWU_P_MAX { "ok" } else { "mismatch" }
        ),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    results.push(check(1, "taylor equivalence", secs(20), taylor));
    results.push(check(2, "greedy guarantee", secs(60), greedy_guarantee));
    results.push(check(3, "radin exhaustive equivalence", secs(10), radin_exhaustive));

    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let setup = Instant::now();
    let zoo = desk_zoo(cfg.clone(), dir.path());
    println!("     desk zoo setup (N={}): {:.2}s", zoo.zoo.len(), setup.elapsed().as_secs_f64());
    results.push(check(4, "prior at B=1 picks uniform soup", secs(5), || prior_b1(&zoo, &cfg)));
    results.push(check(5, "fast/true correlation", secs(120), || correlation(&zoo, &cfg)));
    results.push(check(6, "budget monotonicity", secs(120), || monotone(&zoo, &cfg)));
    results.push(check(7, "exact linear-case identity", secs(10), linear_identity));
    results.push(check(8, "determinism goldens", secs(300), determinism));
    results.push(check(9, "statistical machinery", secs(10), statistics));

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
