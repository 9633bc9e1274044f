//! Acceptance checks, one line per criterion.
//!
//! `SAFESDP_ACCEPT=1,4` runs a subset. `SAFESDP_STRETCH=1` adds the d=10
//! training run, `SAFESDP_MANUAL=1` the d=40 run and the 20-trial search.
//! The process exits nonzero on a failed criterion only when
//! `SAFESDP_ACCEPT_STRICT=1`.

mod common;

use std::time::Instant;

use common::{brute_force_max_2d, fd_relative_error, mixed_batch, random_multipliers};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use safesdp::admm::{
    augmented_lagrangian, augmented_lagrangian_grad, solve_frozen, AdmmSettings, AdmmTrainer, FrozenSettings,
    HyperParams, TrainConfig,
};
use safesdp::attack::{pgd_lower_bound, PgdConfig};
use safesdp::bounds::{closed_form_b, theory_sdp_limit};
use safesdp::dataset::sample_ball;
use safesdp::experiments::{hyper_search, run_gap_experiment, train_record, GapConfig, HyperSpace};
use safesdp::sdp::{build_sdp, lift_point, Penalties};
use safesdp::verify::certify;
use safesdp::{init_xavier, InputRegion, Norm};

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

fn selected(id: &str) -> bool {
    match std::env::var("SAFESDP_ACCEPT") {
        Ok(list) => list.split(',').any(|s| s.trim() == id),
        Err(_) => true,
    }
}

fn run(id: &'static str, name: &str, limit_secs: f64, check: impl FnOnce() -> (bool, String)) -> Line {
    let t0 = Instant::now();
    let (ok, detail) = check();
    let secs = t0.elapsed().as_secs_f64();
    let in_time = secs <= limit_secs;
    let line = Line {
        id,
        pass: ok && in_time,
        detail: format!(
            "{name}: {detail}; {secs:.1}s (limit {limit_secs:.0}s{})",
            if in_time { "" } else { ", exceeded" }
        ),
    };
    println!("{} [{}] {}", if line.pass { "PASS" } else { "FAIL" }, line.id, line.detail);
    line
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_rank_one() -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst_con = 0.0f64;
    let mut worst_obj = 0.0f64;
    for k in 0..10u64 {
        let d = rng.random_range(1..=10);
        let layers = 1 + (k as usize % 2);
        let norm = if k % 2 == 0 { Norm::L2 } else { Norm::Linf };
        let p = init_xavier(d, 3 * d, layers, k);
        let region = InputRegion::new(norm, 1.0).unwrap();
        let prob = build_sdp(&p, &region).unwrap();
        for x in sample_ball(100, d, norm, 1.0, 100 + k) {
            let lift = lift_point(&p, &region, &x).unwrap();
            let ax = prob.apply_a(&lift).unwrap();
            for (l, r) in ax.iter().zip(&prob.rhs) {
                worst_con = worst_con.max((l - r).abs());
            }
            worst_obj = worst_obj.max((prob.objective_value(&lift) - p.logit(&x)).abs());
        }
    }
    (
        worst_con <= 1e-8 && worst_obj <= 1e-8,
        format!("max constraint violation {worst_con:.1e}, max objective error {worst_obj:.1e} (tol 1e-8)"),
    )
}

fn c2_sandwich() -> (bool, String) {
    let mut ok = true;
    let mut worst_pgd = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for k in 0..20u64 {
        let norm = if k % 2 == 0 { Norm::L2 } else { Norm::Linf };
        let p = init_xavier(2, 2, 1, 200 + k);
        let region = InputRegion::new(norm, 1.0).unwrap();
        let exact = brute_force_max_2d(&p, norm, 1.0);
        let report = certify(&p, &region, &FrozenSettings::default()).unwrap();
        let pgd = pgd_lower_bound(&p, &region, &PgdConfig::default(), k).unwrap();
        min_margin = min_margin.min(report.certified - exact);
        worst_pgd = worst_pgd.max((pgd.value - exact).abs());
        ok &= exact <= report.certified && (pgd.value - exact).abs() <= 1e-3;
    }
    (
        ok,
        format!("min(certified - exact) {min_margin:.2e} (>= 0), max |pgd - exact| {worst_pgd:.1e} (<= 1e-3)"),
    )
}

fn training(cfg: &TrainConfig, min_accuracy: f64) -> (bool, String) {
    match train_record(cfg, 100_000, 424_242) {
        Ok(r) => (
            r.safe && r.recall_certified && r.recall == 1.0 && r.accuracy >= min_accuracy,
            format!(
                "safe {}, certified recall {}, empirical recall {:.4}, accuracy {:.4} (>= {min_accuracy}), best step {:?}, train {:.0}s",
                r.safe, r.recall_certified, r.recall, r.accuracy, r.best_step, r.train_secs
            ),
        ),
        Err(e) => (false, format!("error: {e}")),
    }
}

fn c3_safe_d5() -> (bool, String) {
    training(&TrainConfig::default(), 0.90)
}

fn c3_stretch() -> (bool, String) {
    let cfg = TrainConfig {
        d: 10,
        h: 30,
        budget: 10_000,
        hyper: HyperParams {
            mu: 0.23,
            rho: 9.9,
            delta: 8.1e-3,
            alpha: 0.28,
            eta: 4.3e-3,
        },
        ..TrainConfig::default()
    };
    training(&cfg, 0.93)
}

fn c3_manual_d40() -> (bool, String) {
    let cfg = TrainConfig {
        d: 40,
        h: 120,
        budget: 30_000,
        hyper: HyperParams {
            mu: 0.87,
            rho: 7.9,
            delta: 3.3e-3,
            alpha: 0.066,
            eta: 2.1e-4,
        },
        ..TrainConfig::default()
    };
    training(&cfg, 0.90)
}

fn c4_safe_box_d2() -> (bool, String) {
    let cfg = TrainConfig {
        d: 2,
        h: 6,
        p: Norm::Linf,
        budget: 20_000,
        ..TrainConfig::default()
    };
    training(&cfg, 0.95)
}

fn c5_gap() -> (bool, String) {
    let cfg = GapConfig::default();
    let records = run_gap_experiment(&cfg);
    let mut crown = Vec::new();
    let mut ratio_20 = f64::NAN;
    let mut sound = records.len() == 30;
    for &d in &cfg.dims {
        let rows: Vec<_> = records.iter().filter(|r| r.d == d).collect();
        sound &= rows.iter().all(|r| r.b_pgd <= r.b_sdp + 1e-6 && r.b_pgd <= r.b_crown + 1e-6);
        crown.push(median(rows.iter().map(|r| r.gap_crown).collect()));
        if d == 20 {
            ratio_20 = median(rows.iter().map(|r| r.gap_crown / r.gap_sdp).collect());
        }
    }
    let increasing = crown.windows(2).all(|w| w[1] > w[0]);
    (
        sound && increasing && ratio_20 >= 3.0,
        format!(
            "{} records, median crown gaps {:?}, median crown/sdp ratio at d=20 {ratio_20:.2} (>= 3)",
            records.len(),
            crown.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn c6_closed_form() -> (bool, String) {
    let mut total = 0.0;
    for seed in 0..10u64 {
        let mut p = init_xavier(400, 400, 1, seed);
        p.layers.iter_mut().for_each(|l| l.bias.iter_mut().for_each(|b| *b = 0.0));
        total += closed_form_b(&p, 1.0).unwrap();
    }
    let mean = total / 10.0;
    let target = (400.0f64 * 400.0).sqrt() / 16.0;
    (
        (mean - target).abs() <= 0.1 * target,
        format!("mean closed form {mean:.3}, target {target} (within 10%)"),
    )
}

fn c7_theory() -> (bool, String) {
    let limit = 1.2 * theory_sdp_limit(100, 300, 2, 1.0, Norm::L2);
    let settings = FrozenSettings::with_tol(1e-4, 120);
    let mut values = Vec::new();
    for seed in 0..5u64 {
        let p = init_xavier(100, 300, 2, seed);
        match certify(&p, &InputRegion::unit_l2(), &settings) {
            Ok(r) => values.push(r.certified),
            Err(e) => return (false, format!("seed {seed}: {e}")),
        }
    }
    (
        values.iter().all(|v| *v <= limit),
        format!(
            "certified bounds {:?} vs 1.2 x limit {limit:.4}",
            values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn c8_gradients() -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for k in 0..10u64 {
        let d = rng.random_range(1..=6);
        let h = rng.random_range(1..=6);
        let layers = rng.random_range(1..=2);
        let norm = if rng.random_bool(0.5) { Norm::L2 } else { Norm::Linf };
        let p = init_xavier(d, h, layers, 800 + k);
        let region = InputRegion::new(norm, 1.0).unwrap();
        let block = build_sdp(&p, &region).unwrap().block;
        let mult = random_multipliers(&block, 900 + k);
        let pen = Penalties {
            mu: rng.random_range(0.1..10.0),
            rho: rng.random_range(0.1..10.0),
        };
        let batch = mixed_batch(d, 32, k);
        for b in [None, Some(batch.as_slice())] {
            let g = augmented_lagrangian_grad(&p, &region, &mult, pen, b).unwrap();
            let err = fd_relative_error(&p, &g, 1e-5, |q| augmented_lagrangian(q, &region, &mult, pen, b).unwrap());
            worst = worst.max(err);
        }
    }
    (worst <= 1e-4, format!("max relative error {worst:.2e} (<= 1e-4)"))
}

fn c9_contracts() -> (bool, String) {
    let p = init_xavier(5, 15, 2, 9);
    let mut t = AdmmTrainer::new(p.clone(), InputRegion::unit_l2(), AdmmSettings::default()).unwrap();
    let mut worst_grad = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let mut max_comp = f64::NEG_INFINITY;
    for _ in 0..100 {
        t.update_y().unwrap();
        let g = t.y_gradient().unwrap();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn = t.state.mult.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_grad = worst_grad.max(gn / (1.0 + yn));
        let v = t.update_s().unwrap();
        let s = &t.state.mult.s_mat;
        min_eig = min_eig.min(s.lambda_min().unwrap());
        let mut diff = s.clone();
        diff.axpy(-1.0, &v);
        max_comp = max_comp.max(s.inner(&diff));
        t.state.inner_steps += 1;
        t.update_x().unwrap();
    }
    let prob = build_sdp(&p, &InputRegion::unit_l2()).unwrap();
    let sol = solve_frozen(&prob, 1e-6, 1000).unwrap();
    (
        worst_grad <= 1e-8 && min_eig >= -1e-8 && max_comp <= 1e-6 && sol.residual <= 1e-6,
        format!(
            "max |grad_y L|/(1+|y|) {worst_grad:.1e}, min eig S {min_eig:.1e}, max <S, S-V> {max_comp:.1e}, frozen residual {:.1e} after {} sweeps",
            sol.residual, sol.iterations
        ),
    )
}

fn hypersearch_d5() -> (bool, String) {
    let base = TrainConfig::default();
    let reference = match safesdp::admm::run_training(&base) {
        Ok(o) => o.best_safe.map_or(0.0, |c| c.accuracy),
        Err(e) => return (false, format!("reference run: {e}")),
    };
    match hyper_search(&base, &HyperSpace::default(), 20, 0) {
        Ok(r) => (
            r.best_score >= reference - 0.03,
            format!("best search accuracy {:.4}, reference {reference:.4}", r.best_score),
        ),
        Err(e) => (false, format!("error: {e}")),
    }
}

fn main() {
    let mut lines = Vec::new();
    let plan: [(&'static str, &str, f64, fn() -> (bool, String)); 9] = [
        ("1", "rank-1 feasibility", 60.0, c1_rank_one),
        ("2", "exactness sandwich on tiny nets", 120.0, c2_sandwich),
        ("3", "d=5 safe training", 600.0, c3_safe_d5),
        ("4", "d=2 l-inf safe training", 900.0, c4_safe_box_d2),
        ("5", "gap ordering", 1200.0, c5_gap),
        ("6", "linear bound concentration", 60.0, c6_closed_form),
        ("7", "wide-network limit", 600.0, c7_theory),
        ("8", "lagrangian gradient fidelity", 120.0, c8_gradients),
        ("9", "admm step contracts", 300.0, c9_contracts),
    ];
    for (id, name, limit, f) in plan {
        if selected(id) {
            lines.push(run(id, name, limit, f));
        }
    }
    if env_flag("SAFESDP_STRETCH") {
        lines.push(run("3s", "d=10 safe training (stretch)", 1800.0, c3_stretch));
    } else {
        println!("SKIP [3s] d=10 safe training (stretch): set SAFESDP_STRETCH=1");
    }
    if env_flag("SAFESDP_MANUAL") {
        lines.push(run("3m", "d=40 safe training (manual)", f64::INFINITY, c3_manual_d40));
        lines.push(run("hs", "20-trial search at d=5 (manual)", f64::INFINITY, hypersearch_d5));
    } else {
        println!("SKIP [3m] d=40 safe training (manual): set SAFESDP_MANUAL=1");
        println!("SKIP [hs] 20-trial search at d=5 (manual): set SAFESDP_MANUAL=1");
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        lines.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        }
    );
    if env_flag("SAFESDP_ACCEPT_STRICT") && !failed.is_empty() {
        std::process::exit(1);
    }
}
