//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Criteria 6-8 need twenty full desk-scale training runs. Finished runs are
//! cached under `$GRAM_ACCEPTANCE_DIR` (default `target/tmp/acceptance`)
//! and reused when their config matches; an interrupted run resumes from
//! its latest checkpoint. Set `GRAM_ACCEPTANCE_RETRAIN=1` to train afresh,
//! or `GRAM_ACCEPTANCE_ONLY=1,2,9` to run a subset.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;

use gram_core::encoders::{alpha, encoder_loss, finetune_alpha, AdapterGrads, AlphaParams, EpinetAdapter};
use gram_core::envsim::{ContextSet, NUM_ACTUATORS};
use gram_core::evalcli::{self, DeploymentGrid, GridRow};
use gram_core::netcore::{Init, Matrix, Mlp, Tape};
use gram_core::pipeline::{self, Algorithm, Checkpoint, ContextSource, ExperimentConfig, LogRow, ModesSetting, Stage, Switch};
use gram_core::ppo::gae;
use gram_core::rng::{self, Rng};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Episodes per grid cell and seed for the ordering criteria.
const GRID_EPISODES: usize = 200;
/// Episodes per source for the uncertainty comparison.
const UNCERTAINTY_EPISODES: usize = 32;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() {
    let root = cache_root();
    fs::create_dir_all(&root).expect("cache dir");
    let mut report = String::new();
    let mut failed = Vec::new();
    let criteria: [(&str, fn(&Path) -> Outcome); 9] = [
        ("1 gradient correctness", gradients),
        ("2 alpha formula", alpha_formula),
        ("3 calibration quantiles", calibration),
        ("4 gae oracle", gae_oracle),
        ("5 baseline reduction", baseline_reduction),
        ("6 variance separation", variance_separation),
        ("7 ordering vs baselines", ordering),
        ("8 mixed vs separate collection", ablation),
        ("9 determinism and resume", determinism),
    ];
    let only: Option<Vec<String>> = std::env::var("GRAM_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|x| x.trim().to_string()).collect());
    let mut skipped = 0;
    for (name, check) in criteria {
        let number = name.split(' ').next().unwrap();
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == number)) {
            println!("criterion {name}: SKIP");
            skipped += 1;
            continue;
        }
        let t = Instant::now();
        let o = check(&root);
        let line = format!(
            "criterion {name}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        println!("{line}");
        writeln!(report, "{line}").unwrap();
        if !o.pass {
            failed.push(name);
        }
    }
    if skipped == 0 {
        fs::write(root.join("acceptance_report.txt"), &report).expect("report");
    }
    if failed.is_empty() && skipped == 0 {
        println!("acceptance: all 9 criteria passed");
    } else if failed.is_empty() {
        println!("acceptance: {} passed, {skipped} skipped", 9 - skipped);
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}

fn cache_root() -> PathBuf {
    std::env::var_os("GRAM_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

// ---------------------------------------------------------------- 1

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst per-entry error relative to the entry, with an absolute floor
/// at the finite-difference noise level.
fn entry_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (x.abs().max(y.abs()).max(1e-5)))
        .fold(0.0, f64::max)
}

fn central_difference(params: &mut [f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    const H: f64 = 1e-5;
    (0..params.len())
        .map(|i| {
            let x = params[i];
            params[i] = x + H;
            let up = f(params);
            params[i] = x - H;
            let down = f(params);
            params[i] = x;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

fn gradients(_: &Path) -> Outcome {
    let t = Instant::now();
    let mut rng = rng::stream(11, 0);
    let mut worst: f64 = 0.0;

    for _ in 0..50 {
        let depth = rng.random_range(0..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=16));
        }
        sizes.push(rng.random_range(1..=4));
        let mut net = Mlp::new(&sizes, Init::new(1.0, 1.0), &mut rng).unwrap();
        let x = random_matrix(3, sizes[0], &mut rng);
        let target = random_matrix(3, *sizes.last().unwrap(), &mut rng);
        let loss = |net: &Mlp| -> f64 {
            let y = net.forward_batch(&x).unwrap();
            0.5 * y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let mut tape = Tape::new();
        let y = net.forward_traced(&x, &mut tape).unwrap().clone();
        let g_out = Matrix::from_vec(
            y.rows(),
            y.cols(),
            y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a - b).collect(),
        );
        let mut analytic = vec![0.0; net.num_params()];
        net.backward(&tape, &g_out, &mut analytic).unwrap();
        let mut p = net.params().to_vec();
        let numeric = central_difference(&mut p, &mut |q| {
            net.params_mut().copy_from_slice(q);
            loss(&net)
        });
        worst = worst.max(rel_err(&analytic, &numeric)).max(entry_err(&analytic, &numeric));
    }

    // epinet adapters: the learnable branch sees h̃ as a constant
    let mut epi_worst: f64 = 0.0;
    for _ in 0..20 {
        let hist = rng.random_range(2..=6);
        let base_hidden = [rng.random_range(2..=8), rng.random_range(2..=8)];
        let epi_hidden = [rng.random_range(2..=6), rng.random_range(2..=6)];
        let d = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let n = rng.random_range(2..=4);
        let (mut r1, mut r2, mut r3) = (rng::stream(rng.random(), 0), rng::stream(rng.random(), 0), rng::stream(rng.random(), 0));
        let mut adapter =
            EpinetAdapter::new(hist, &base_hidden, d, Some((&epi_hidden[..], m)), &mut r1, &mut r2, &mut r3).unwrap();
        let b = 3;
        let h = random_matrix(b, hist, &mut rng);
        let targets = random_matrix(b, d, &mut rng);
        let xi = random_matrix(b * n, m, &mut rng);
        let mut grads = AdapterGrads::zeros_like(&adapter);
        adapter.loss_and_grads(&h, &targets, &xi, n, &mut grads).unwrap();

        let feats = adapter.features(&h).unwrap();
        let sg_loss = |a: &EpinetAdapter| -> f64 {
            let base = a.base.forward_batch(&h).unwrap();
            let mut s = a.epinet_term(&feats, &xi, n).unwrap();
            for bi in 0..b {
                for k in 0..n {
                    for (o, v) in s.row_mut(bi * n + k).iter_mut().zip(base.row(bi)) {
                        *o += v;
                    }
                }
            }
            encoder_loss(&targets, &s, n).unwrap()
        };
        let mut p = adapter.base.params().to_vec();
        let num_base = central_difference(&mut p, &mut |q| {
            adapter.base.params_mut().copy_from_slice(q);
            sg_loss(&adapter)
        });
        adapter.base.params_mut().copy_from_slice(&p);
        let mut p = adapter.epinet.as_ref().unwrap().learnable().params().to_vec();
        let num_learn = central_difference(&mut p, &mut |q| {
            adapter.epinet.as_mut().unwrap().learnable_mut().params_mut().copy_from_slice(q);
            sg_loss(&adapter)
        });
        epi_worst = epi_worst
            .max(rel_err(&grads.base, &num_base))
            .max(entry_err(&grads.base, &num_base))
            .max(rel_err(&grads.learnable, &num_learn))
            .max(entry_err(&grads.learnable, &num_learn));
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        worst < 1e-4 && epi_worst < 1e-4 && secs < 60.0,
        format!("50 mlps worst rel err {worst:.2e}; 20 epinet adapters worst {epi_worst:.2e}; {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 2

fn alpha_oracle(u: f64, beta: f64, delta: f64) -> f64 {
    if u <= delta {
        1.0
    } else {
        (-(beta * (u - delta))).exp()
    }
}

fn alpha_formula(_: &Path) -> Outcome {
    let mut rng = rng::stream(12, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let u = rng.random_range(0.0..10.0);
        let beta = rng.random_range(0.0..50.0);
        let delta = rng.random_range(0.0..5.0);
        worst = worst.max((alpha(u, beta, delta) - alpha_oracle(u, beta, delta)).abs());
        let q_max = delta + rng.random_range(0.01..5.0);
        let p = AlphaParams::from_quantiles(delta, q_max, 0.01).unwrap();
        let b = (100f64).ln() / (q_max - delta);
        worst = worst.max((p.alpha(u) - alpha_oracle(u, b, delta)).abs());
    }
    let boundary = (0..1000).all(|_| {
        let d = rng.random_range(0.0..5.0);
        alpha(d, rng.random_range(0.0..1e6), d) == 1.0
    });
    Outcome::new(
        worst <= 1e-12 && boundary,
        format!("max |alpha - oracle| {worst:.1e} over 1000 triples; alpha(delta) == 1 exactly: {boundary}"),
    )
}

// ---------------------------------------------------------------- 3

/// `⌈p·n/100⌉` in integers.
fn rank(percent: usize, n: usize) -> usize {
    (percent * n).div_ceil(100)
}

fn calibration(_: &Path) -> Outcome {
    let mut rng = rng::stream(13, 0);
    let mut sets = 0;
    let mut bad = Vec::new();
    while sets < 500 {
        let n = rng.random_range(10..3000);
        let ties = sets % 3 == 2;
        let scale = rng.random_range(0.01..10.0);
        let mut us: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.random::<f64>().powi(3) * scale;
                if ties {
                    (x * 20.0).round() / 20.0
                } else {
                    x
                }
            })
            .collect();
        let mut sorted = us.clone();
        sorted.sort_by(f64::total_cmp);
        let (r90, r99) = (rank(90, n), rank(99, n));
        let (q90, q99) = (sorted[r90 - 1], sorted[r99 - 1]);
        if q90 == q99 {
            continue;
        }
        sets += 1;
        us.reverse();
        let p = finetune_alpha(&us, 0.90, 0.99, 0.01).unwrap();
        let a: Vec<f64> = sorted.iter().map(|&u| p.alpha(u)).collect();
        let bottom_ok = a[..r90].iter().all(|&x| x == 1.0);
        // above the 0.90 rank only values tied with it keep alpha = 1
        let top_ok = sorted[r90..].iter().zip(&a[r90..]).all(|(&u, &x)| (x == 1.0) == (u == q90));
        let exact_count = ties || a.iter().filter(|&&x| x == 1.0).count() == r90;
        let at_max = (p.alpha(q99) - 0.01).abs() <= 1e-10;
        if !(bottom_ok && top_ok && exact_count && at_max) {
            bad.push(format!("n={n} ties={ties}"));
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!("500 validation sets (1/3 with ties); violations: {}", if bad.is_empty() { "none".into() } else { bad.join("; ") }),
    )
}

// ---------------------------------------------------------------- 4

fn brute_gae(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_max = r.len();
    (0..t_max)
        .map(|t| {
            let mut sum = 0.0;
            let mut weight = 1.0;
            for l in t..t_max {
                let live = if done[l] { 0.0 } else { 1.0 };
                sum += weight * (r[l] + gamma * live * v[l + 1] - v[l]);
                if done[l] {
                    break;
                }
                weight *= gamma * lambda;
            }
            sum
        })
        .collect()
}

fn monte_carlo(r: &[f64], v: &[f64], done: &[bool], gamma: f64) -> Vec<f64> {
    let t_max = r.len();
    let mut g = v[t_max];
    let mut out = vec![0.0; t_max];
    for t in (0..t_max).rev() {
        g = r[t] + if done[t] { 0.0 } else { gamma * g };
        out[t] = g - v[t];
    }
    out
}

fn gae_oracle(_: &Path) -> Outcome {
    let mut rng = rng::stream(14, 0);
    let mut worst: f64 = 0.0;
    let mut mc_worst: f64 = 0.0;
    let mut exact = true;
    for trial in 0..200 {
        let t = 50;
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let p_done = if trial % 2 == 0 { 0.0 } else { 0.1 };
        let r: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..=t).map(|_| rng.random_range(-5.0..5.0)).collect();
        let done: Vec<bool> = (0..t).map(|_| rng.random::<f64>() < p_done).collect();
        let (a, _) = gae(&r, &v, &done, gamma, lambda).unwrap();
        worst = worst.max(rel_abs(&a, &brute_gae(&r, &v, &done, gamma, lambda)));
        let (a1, _) = gae(&r, &v, &done, gamma, 1.0).unwrap();
        mc_worst = mc_worst.max(rel_abs(&a1, &monte_carlo(&r, &v, &done, gamma)));

        // integer data with γ = λ = 1: every operation is exact
        let ri: Vec<f64> = (0..t).map(|_| rng.random_range(-8..=8) as f64).collect();
        let vi: Vec<f64> = (0..=t).map(|_| rng.random_range(-50..=50) as f64).collect();
        let (ai, _) = gae(&ri, &vi, &done, 1.0, 1.0).unwrap();
        exact &= ai == monte_carlo(&ri, &vi, &done, 1.0);
    }
    Outcome::new(
        worst <= 1e-10 && mc_worst <= 1e-10 && exact,
        format!("200 random 50-step sequences: max err vs brute force {worst:.1e}, lambda=1 vs Monte Carlo {mc_worst:.1e}, bit-exact on exact data: {exact}"),
    )
}

fn rel_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 5

fn small(alg: Algorithm, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        num_envs: 16,
        rl_updates: 40,
        supervised_updates: 4,
        calibration_samples: 500,
        checkpoint_interval: 10,
        ..ExperimentConfig::for_algorithm(alg)
    }
}

fn rl_rows(log: &[LogRow]) -> Vec<&LogRow> {
    log.iter().filter(|r| r.phase == "rl").collect()
}

fn baseline_reduction(root: &Path) -> Outcome {
    let dir = root.join("reduction");
    let gram = ExperimentConfig {
        modes: ModesSetting::AllId,
        adversary: Switch::Off,
        ..small(Algorithm::Gram, 3)
    };
    let ctx = small(Algorithm::Contextual, 3);
    let a = pipeline::train(gram, &dir.join("gram_all_id")).unwrap();
    let b = pipeline::train(ctx, &dir.join("contextual")).unwrap();
    let (ra, rb) = (rl_rows(&a.log), rl_rows(&b.log));
    let same_log = ra == rb && ra.len() == 40;
    let same_teacher = a.rl.ac == b.rl.ac;
    let losses_differ_from_gram = {
        let g = pipeline::train(small(Algorithm::Gram, 3), &dir.join("gram")).unwrap();
        rl_rows(&g.log) != ra
    };
    Outcome::new(
        same_log && same_teacher && losses_differ_from_gram,
        format!(
            "40 updates: identical PPO log rows {same_log}, identical teacher {same_teacher}, default GRAM differs {losses_differ_from_gram}"
        ),
    )
}

// ---------------------------------------------------------------- 6-8

fn desk(alg: Algorithm, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..ExperimentConfig::for_algorithm(alg)
    }
}

/// Finished desk-scale run, from the cache when its config matches.
fn trained(root: &Path, alg: Algorithm, seed: u64) -> Checkpoint {
    let dir = root.join(format!("{alg}_seed{seed}"));
    let cfg = desk(alg, seed);
    let retrain = std::env::var_os("GRAM_ACCEPTANCE_RETRAIN").is_some_and(|v| v == "1");
    if !retrain {
        if let Ok(ck) = Checkpoint::load(&dir.join(pipeline::FINAL_CHECKPOINT)) {
            if ck.config == cfg && ck.stage == Stage::Done {
                return ck;
            }
        }
        if let Ok(ck) = Checkpoint::load(&dir.join(pipeline::LATEST_CHECKPOINT)) {
            if ck.config == cfg {
                eprintln!("resuming {alg} seed {seed}");
                return pipeline::run(ck, &dir).unwrap();
            }
        }
    }
    eprintln!("training {alg} seed {seed}");
    pipeline::train(cfg, &dir).unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn variance_separation(root: &Path) -> Outcome {
    let mut detail = String::new();
    let mut wins = 0;
    for seed in SEEDS {
        let ck = trained(root, Algorithm::Gram, seed);
        let eval_seed = 1000 + seed;
        let id = evalcli::collect_uncertainty(&ck, ContextSource::Set(ContextSet::base_id()), UNCERTAINTY_EPISODES, eval_seed)
            .unwrap();
        let mut ood = Vec::new();
        for k in 0..NUM_ACTUATORS {
            let src = ContextSource::Cell {
                base: ContextSet::base_id(),
                mass_multiple: None,
                frozen_actuator: Some(k),
            };
            ood.extend(evalcli::collect_uncertainty(&ck, src, UNCERTAINTY_EPISODES, eval_seed).unwrap());
        }
        let (mi, mo) = (median(id), median(ood));
        if mi < mo {
            wins += 1;
        }
        write!(detail, "seed {seed}: {mi:.3e} vs {mo:.3e}; ").unwrap();
    }
    Outcome::new(wins == SEEDS.len(), format!("median u ID vs frozen: {detail}{wins}/5 seeds"))
}

/// Grid rows of every seed for `alg`, cached as CSV beside the runs.
fn grid_rows(root: &Path, alg: Algorithm) -> Vec<GridRow> {
    let grid = DeploymentGrid {
        episodes: GRID_EPISODES,
        ..DeploymentGrid::default()
    };
    let mut rows = Vec::new();
    for seed in SEEDS {
        let ck = trained(root, alg, seed);
        let path = root.join(format!("grid_{alg}_seed{seed}.csv"));
        let cached = evalcli::read_grid_csv(&path)
            .ok()
            .filter(|r| r.len() == 25 && r.iter().all(|x| x.n == GRID_EPISODES) && is_newer(&path, root, alg, seed));
        let r = match cached {
            Some(r) => r,
            None => {
                let r = evalcli::evaluate(&ck, &grid, seed).unwrap();
                evalcli::write_grid_csv(&r, &path).unwrap();
                r
            }
        };
        rows.extend(r);
    }
    rows
}

fn is_newer(csv: &Path, root: &Path, alg: Algorithm, seed: u64) -> bool {
    let ck = root.join(format!("{alg}_seed{seed}")).join(pipeline::FINAL_CHECKPOINT);
    match (fs::metadata(csv).and_then(|m| m.modified()), fs::metadata(ck).and_then(|m| m.modified())) {
        (Ok(a), Ok(b)) => a >= b,
        _ => false,
    }
}

struct Averages {
    id: Vec<f64>,
    ood: Vec<f64>,
}

impl Averages {
    fn of(rows: &[GridRow]) -> Self {
        let per_seed: Vec<_> = evalcli::summarize(rows).into_iter().filter(|s| s.seed.is_some()).collect();
        Self {
            id: per_seed.iter().map(|s| s.id_average).collect(),
            ood: per_seed.iter().map(|s| s.ood_average).collect(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_err(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

fn ordering(root: &Path) -> Outcome {
    let gram = Averages::of(&grid_rows(root, Algorithm::Gram));
    let ctx = Averages::of(&grid_rows(root, Algorithm::Contextual));
    let rob = Averages::of(&grid_rows(root, Algorithm::Robust));
    let (g_id, c_id, r_id) = (mean(&gram.id), mean(&ctx.id), mean(&rob.id));
    let (g_ood, r_ood) = (mean(&gram.ood), mean(&rob.ood));
    let a = c_id >= r_id;
    let b = (g_id - c_id).abs() <= 0.10 * c_id;
    let strict_c = g_ood >= r_ood;
    let noise = (std_err(&gram.ood).powi(2) + std_err(&rob.ood).powi(2)).sqrt();
    let relaxed_c = !strict_c && g_ood >= 0.95 * r_ood && r_ood - g_ood <= noise;
    let c_note = if strict_c {
        "met".to_string()
    } else if relaxed_c {
        format!("met only under the 0.95x relaxation (gap {:.4} within seed noise {noise:.4})", r_ood - g_ood)
    } else {
        format!("not met (gap {:.4}, seed noise {noise:.4})", r_ood - g_ood)
    };
    Outcome::new(
        a && b && (strict_c || relaxed_c),
        format!(
            "(a) contextual ID {c_id:.4} >= robust ID {r_id:.4}: {a}; (b) GRAM ID {g_id:.4} within 10% of contextual: {b}; (c) GRAM OOD {g_ood:.4} vs robust OOD {r_ood:.4}: {c_note}"
        ),
    )
}

fn ablation(root: &Path) -> Outcome {
    let gram = Averages::of(&grid_rows(root, Algorithm::Gram));
    let sep = Averages::of(&grid_rows(root, Algorithm::GramSeparate));
    let (g, s) = (mean(&gram.ood), mean(&sep.ood));
    Outcome::new(g >= s, format!("OOD average GRAM {g:.4} vs separate collection {s:.4}"))
}

// ---------------------------------------------------------------- 9

fn determinism(root: &Path) -> Outcome {
    let dir = root.join("determinism");
    let _ = fs::remove_dir_all(&dir);
    let cfg = ExperimentConfig {
        rl_updates: 20,
        checkpoint_interval: 5,
        keep_checkpoints: true,
        ..small(Algorithm::Gram, 7)
    };
    let a = pipeline::train(cfg.clone(), &dir.join("a")).unwrap();
    let b = pipeline::train(cfg, &dir.join("b")).unwrap();
    let read = |p: PathBuf| fs::read(&p).unwrap();
    let identical = read(dir.join("a").join(pipeline::FINAL_CHECKPOINT)) == read(dir.join("b").join(pipeline::FINAL_CHECKPOINT));

    let mid = dir.join("a").join("checkpoint_rl_00010.json");
    let c = pipeline::resume(&mid, &dir.join("c")).unwrap();
    let next: Vec<_> = rl_rows(&a.log).into_iter().filter(|r| (11..=20).contains(&r.update)).collect();
    let resumed: Vec<_> = rl_rows(&c.log).into_iter().filter(|r| (11..=20).contains(&r.update)).collect();
    let next_ok = next.len() == 10 && next == resumed;
    let final_ok = read(dir.join("a").join(pipeline::FINAL_CHECKPOINT)) == read(dir.join("c").join(pipeline::FINAL_CHECKPOINT));
    Outcome::new(
        identical && next_ok && final_ok && a == b,
        format!("two trainings byte-identical: {identical}; resume at update 10 reproduces updates 11-20: {next_ok}; resumed final checkpoint identical: {final_ok}"),
    )
}
