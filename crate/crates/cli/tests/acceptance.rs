//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails or exceeds its time budget.

use std::path::Path;
use std::time::{Duration, Instant};

use polybrud_cli::config::from_table;
use polybrud_cli::{run, RunOptions};
use polybrud_core::analysis::FixedPointClass;
use polybrud_core::{
    brud_fixed_point, brud_gradient_exact, brud_gradient_minibatch, build_game, compute_stats,
    generate, rng, sigma_condition, train_offline, train_online, Capacity, DatasetSpec, GameSpec,
    GradientMode, JointActionSample, JointPolicy, LearnConfig, PjapConfig, Polynomial2,
    ReplayBuffer, TwinPeaksParams,
};
use rand::Rng;
use rayon::prelude::*;

/// sqrt((C - 2A) / 2B) for A=1, B=4, C=5.
const A_DAGGER: f64 = 0.61237;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn twin() -> Polynomial2 {
    build_game(&GameSpec::TwinPeaks(TwinPeaksParams::default())).unwrap()
}

fn a_dagger_exact() -> f64 {
    (3.0f64 / 8.0).sqrt()
}

// relative error with a floor so near-zero gradients are compared absolutely
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_game(r: &mut impl Rng) -> Polynomial2 {
    match r.random_range(0..5) {
        0 => build_game(&GameSpec::Decoupled).unwrap(),
        1 => build_game(&GameSpec::SignAgreement).unwrap(),
        2 => build_game(&GameSpec::ActionAgreement).unwrap(),
        3 => {
            let a = r.random_range(0.1..2.0);
            let p = TwinPeaksParams::new(a, r.random_range(0.1..5.0), 2.0 * a + r.random_range(0.1..3.0)).unwrap();
            build_game(&GameSpec::TwinPeaks(p)).unwrap()
        }
        _ => {
            let (dx, dy) = (r.random_range(0..=3), r.random_range(0..=3));
            let c = (0..(dx + 1) * (dy + 1)).map(|_| r.random_range(-2.0..2.0)).collect();
            Polynomial2::new(dx, dy, c).unwrap()
        }
    }
}

fn gradient_oracle() -> Outcome {
    let mut r = rng::stream(2024, 0);
    let (mut worst_exact, mut worst_fd) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let poly = random_game(&mut r);
        let n = r.random_range(1..=64);
        let data: Vec<_> = (0..n)
            .map(|k| JointActionSample::new(k, r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let (tx, ty) = (r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
        let pol = JointPolicy::new(tx, ty);
        let mb = brud_gradient_minibatch(&poly, &pol, &data).unwrap();
        let ex = brud_gradient_exact(&poly, &pol, &compute_stats(&data, 8).unwrap()).unwrap();
        worst_exact = worst_exact.max(rel_err(mb.0, ex.0, 1e-2)).max(rel_err(mb.1, ex.1, 1e-2));
        // finite differences of the batch-mean reward, written from scratch here
        let h = 1e-5;
        let mean_over = |f: &dyn Fn(&JointActionSample) -> f64| data.iter().map(f).sum::<f64>() / n as f64;
        let fx = (mean_over(&|s| poly.eval(tx + h, s.a_y)) - mean_over(&|s| poly.eval(tx - h, s.a_y))) / (2.0 * h);
        let fy = (mean_over(&|s| poly.eval(s.a_x, ty + h)) - mean_over(&|s| poly.eval(s.a_x, ty - h))) / (2.0 * h);
        for g in [mb, ex] {
            worst_fd = worst_fd.max(rel_err(g.0, fx, 1e-2)).max(rel_err(g.1, fy, 1e-2));
        }
    }
    check(
        worst_exact <= 1e-9 && worst_fd <= 1e-6,
        format!("max rel err exact-vs-batch {worst_exact:.2e} (tol 1e-9), vs finite diff {worst_fd:.2e} (tol 1e-6)"),
    )
}

fn sign_agreement_offline() -> Outcome {
    let data = generate(&DatasetSpec::uniform(-1.0, 1.0, 1000, 22363)).unwrap();
    let st = compute_stats(&data, 2).unwrap();
    let means_ok = (st.mean_x + 0.02).abs() < 0.005 && (st.mean_y - 0.04).abs() < 0.005;
    let poly = build_game(&GameSpec::SignAgreement).unwrap();
    let cfg = LearnConfig { steps: 10_000, ..Default::default() };
    let want = (st.mean_y.signum(), st.mean_x.signum());
    let mut all = want == (1.0, -1.0);
    for init in [(0.5, 0.5), (-0.5, 0.5), (0.0, -0.5)] {
        let rec = train_offline(&poly, &data, JointPolicy::new(init.0, init.1), &cfg, None, 0).unwrap();
        for w in rec.rows.windows(2) {
            let step = (w[1].theta_x - w[0].theta_x, w[1].theta_y - w[0].theta_y);
            all &= step.0 > 0.0 && step.1 < 0.0 && w[1].grad_x > 0.0 && w[1].grad_y < 0.0;
        }
    }
    let class = brud_fixed_point(&GameSpec::SignAgreement, &st).unwrap().classification;
    check(
        means_ok && all && class == FixedPointClass::NoFiniteFixedPoint,
        format!(
            "means ({:.4}, {:.4}); every step of 3 runs moves (+, -): {all}; classification {class:?}",
            st.mean_x, st.mean_y
        ),
    )
}

fn action_agreement() -> Outcome {
    let raw = generate(&DatasetSpec::uniform(-1.0, 1.0, 500, 5)).unwrap();
    let st = compute_stats(&raw, 2).unwrap();
    // shift so the dataset means are exactly the target
    let data: Vec<_> = raw
        .iter()
        .map(|s| JointActionSample::new(s.id, s.a_x - st.mean_x + 0.3, s.a_y - st.mean_y - 0.1))
        .collect();
    let st = compute_stats(&data, 2).unwrap();
    let poly = build_game(&GameSpec::ActionAgreement).unwrap();
    let cfg = LearnConfig { steps: 100_000, learning_rate: 0.01, ..Default::default() };
    let mut worst = 0.0f64;
    for init in [(0.0, 0.0), (0.9, -0.9), (-1.0, 1.0)] {
        let (x, y) = train_offline(&poly, &data, JointPolicy::new(init.0, init.1), &cfg, None, 0)
            .unwrap()
            .final_policy();
        worst = worst.max((x + 0.1).abs()).max((y - 0.3).abs());
    }
    check(
        worst < 1e-4,
        format!("means ({:.6}, {:.6}); max |theta - (-0.1, 0.3)| = {worst:.2e} (tol 1e-4)", st.mean_x, st.mean_y),
    )
}

fn twin_peaks_origin() -> Outcome {
    let poly = twin();
    let cfg = LearnConfig { steps: 100_000, ..Default::default() };
    let mut worst = 0.0f64;
    for (k, sigma) in [0.1, 0.5, 1.0].into_iter().enumerate() {
        let data = generate(&DatasetSpec::gaussian((0.0, 0.0), sigma, 4_000_000, 40 + k as u64)).unwrap();
        for init in [(0.5, 0.5), (-0.8, 0.3)] {
            let (x, y) = train_offline(&poly, &data, JointPolicy::new(init.0, init.1), &cfg, None, 0)
                .unwrap()
                .final_policy();
            worst = worst.max(x.abs()).max(y.abs());
        }
    }
    let none = sigma_condition(&TwinPeaksParams::default(), 0.0).unwrap().is_none();
    check(
        worst < 1e-3 && none,
        format!("max |theta| = {worst:.2e} (tol 1e-3); sigma condition at mean 0 is none: {none}"),
    )
}

fn twin_peaks_optimum() -> Outcome {
    let poly = twin();
    let cfg = LearnConfig { steps: 100_000, ..Default::default() };
    let a = a_dagger_exact();
    let mut parts = Vec::new();
    let mut ok = true;
    for (sigma, target) in [(0.0, A_DAGGER), (0.5, 0.43741)] {
        let data = generate(&DatasetSpec::gaussian((a, a), sigma, 1_000_000, 11)).unwrap();
        // converged-policy formula from raw sample sums, independent of the crate's stats code
        let n = data.len() as f64;
        let my = data.iter().map(|s| s.a_y).sum::<f64>() / n;
        let m2 = data.iter().map(|s| s.a_y * s.a_y).sum::<f64>() / n;
        let oracle = 5.0 * my / (2.0 + 8.0 * m2);
        let (x, _) = train_offline(&poly, &data, JointPolicy::new(0.0, 0.0), &cfg, None, 0)
            .unwrap()
            .final_policy();
        ok &= (x - target).abs() < 1e-2 && (x - oracle).abs() < 1e-6;
        parts.push(format!("sigma^2={}: theta_x {x:.5} vs {target} (oracle {oracle:.5})", sigma * sigma));
    }
    check(ok, parts.join("; "))
}

fn pjap_fix() -> Outcome {
    let a = a_dagger_exact();
    let data = generate(&DatasetSpec::gaussian((a, a), 0.5, 5000, 7)).unwrap();
    let poly = twin();
    let cfg = LearnConfig {
        steps: 50_000,
        batch_size: 64,
        gradient_mode: GradientMode::Minibatch,
        ..Default::default()
    };
    let pj = PjapConfig { alpha: 5.0, epsilon: 0.01, refresh_fraction: 0.1, ..Default::default() };
    let dist = |p: (f64, f64)| ((p.0 - a).powi(2) + (p.1 - a).powi(2)).sqrt();
    let runs: Vec<_> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let base = train_offline(&poly, &data, JointPolicy::new(0.0, 0.0), &cfg, None, seed).unwrap();
            let pri = train_offline(&poly, &data, JointPolicy::new(0.0, 0.0), &cfg, Some(&pj), seed).unwrap();
            (
                dist(base.final_policy()),
                dist(pri.final_policy()),
                base.tail_mean_distance(0.25),
                pri.tail_mean_distance(0.25),
            )
        })
        .collect();
    let pj_close = runs.iter().filter(|r| r.1 < 0.1).count();
    let base_far = runs.iter().filter(|r| r.0 > 0.15).count();
    let tail_lower = runs.iter().all(|r| r.3 < r.2);
    let fmt: Vec<String> = runs.iter().map(|r| format!("{:.3}/{:.3}", r.0, r.1)).collect();
    check(
        pj_close >= 4 && base_far >= 4 && tail_lower,
        format!(
            "distance baseline/pjap per seed [{}]; pjap within 0.1: {pj_close}/5, baseline beyond 0.15: {base_far}/5, tail distance lower on every seed: {tail_lower}",
            fmt.join(", ")
        ),
    )
}

fn buffer_size_sweep() -> Outcome {
    let poly = build_game(&GameSpec::SignAgreement).unwrap();
    let cfg = LearnConfig {
        steps: 10_000,
        batch_size: 64,
        learning_rate: 0.001,
        exploration_noise_sigma: 0.3,
        param_clamp: Some((-1.0, 1.0)),
        ..Default::default()
    };
    let caps = [Capacity::Bounded(64), Capacity::Bounded(640), Capacity::Bounded(6400), Capacity::Unbounded];
    let means: Vec<f64> = caps
        .par_iter()
        .map(|&cap| {
            (0..5u64)
                .map(|s| train_online(&poly, JointPolicy::new(-0.5, 0.5), &cfg, cap, s).unwrap().0.last().reward)
                .sum::<f64>()
                / 5.0
        })
        .collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    check(
        monotone && means[0] >= 0.2,
        format!("mean final reward by capacity 64/640/6400/unbounded: {means:.3?}"),
    )
}

fn sum_tree_sampling() -> Outcome {
    let mut r = rng::stream(77, 0);
    let mut buf = ReplayBuffer::new(Capacity::Bounded(512)).unwrap();
    let mut worst = 0.0f64;
    for k in 0..10_000 {
        if buf.is_empty() || r.random_bool(0.5) {
            buf.insert(JointActionSample::new(k, 0.0, 0.0), r.random_range(0.0..10.0)).unwrap();
        } else {
            let id = buf.ids().start + r.random_range(0..buf.len());
            buf.update_priorities(&[id], &[r.random_range(0.0..10.0)]).unwrap();
        }
        let direct: f64 = buf.ids().map(|id| buf.priority(id).unwrap()).sum();
        worst = worst.max((buf.total_priority() - direct).abs() / direct.max(f64::MIN_POSITIVE));
    }

    let pri: Vec<f64> = (0..16).map(|_| r.random_range(0.01..5.0)).collect();
    let data: Vec<_> = (0..16).map(|k| JointActionSample::new(k, 0.0, 0.0)).collect();
    let mut small = ReplayBuffer::from_samples(&data, 1.0).unwrap();
    let ids: Vec<usize> = small.ids().collect();
    small.update_priorities(&ids, &pri).unwrap();
    let draws = 100_000;
    let mut counts = [0usize; 16];
    for id in small.sample_prioritized(draws, &mut rng::stream(78, rng::STREAM_SAMPLING)).unwrap().ids {
        counts[id] += 1;
    }
    let total: f64 = pri.iter().sum();
    let freq_err = counts
        .iter()
        .zip(&pri)
        .map(|(&c, p)| (c as f64 / draws as f64 - p / total).abs())
        .fold(0.0, f64::max);
    check(
        worst <= 1e-9 && freq_err <= 0.01,
        format!("root-sum rel err {worst:.2e} over 10^4 mutations; max frequency deviation {freq_err:.4} over 10^5 draws"),
    )
}

fn determinism() -> Outcome {
    let configs = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut names: Vec<_> = std::fs::read_dir(configs)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    names.sort();
    let mut compared = 0;
    for path in &names {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let mut dirs = Vec::new();
        for (pass, jobs) in [(0, 1), (1, 0)] {
            let mut table = polybrud_cli::config::load_table(path).map_err(|e| e.to_string())?;
            let out = tmp.path().join(format!("{stem}_{pass}"));
            table.insert("output_dir".into(), out.to_str().unwrap().into());
            let cfg = from_table(table, None).map_err(|e| format!("{stem}: {e}"))?;
            run(&cfg, &RunOptions { jobs, dry_run: false }).map_err(|e| format!("{stem}: {e}"))?;
            dirs.push(out);
        }
        compared += compare_csvs(&dirs[0], &dirs[1]).map_err(|e| format!("{stem}: {e}"))?;
    }
    check(
        compared > 0,
        format!("{} configs run twice (1 thread vs all cores), {compared} CSVs byte-identical", names.len()),
    )
}

fn compare_csvs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut n = 0;
    for e in std::fs::read_dir(a).map_err(|e| e.to_string())? {
        let name = e.unwrap().file_name();
        if !name.to_string_lossy().ends_with(".csv") {
            continue;
        }
        let (x, y) = (std::fs::read(a.join(&name)), std::fs::read(b.join(&name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => n += 1,
            _ => return Err(format!("{} differs", name.to_string_lossy())),
        }
    }
    Ok(n)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient oracle equivalence", 5, gradient_oracle),
        ("sign agreement offline failure", 10, sign_agreement_offline),
        ("action agreement fixed point", 10, action_agreement),
        ("twin peaks origin-centred data", 30, twin_peaks_origin),
        ("twin peaks optimum-centred data", 30, twin_peaks_optimum),
        ("prioritised sampling fix", 300, pjap_fix),
        ("buffer size off-policyness", 120, buffer_size_sweep),
        ("sum tree and sampling statistics", 10, sum_tree_sampling),
        ("determinism", 600, determinism),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        let over = took > Duration::from_secs(limit);
        let (tag, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over time budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {name} [{:.2}s / {limit}s] {detail}", took.as_secs_f64());
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
