//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with its measured values; run with `--nocapture` to see them.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stragglersim_core::algorithms::{AlgoConfig, Algorithm};
use stragglersim_core::data::{DataConfig, Example};
use stragglersim_core::latency::{sample_lognormal, LatencyProfile};
use stragglersim_core::metrics::{summarize_trials, TrialFinal};
use stragglersim_core::model::{init_params, loss_and_grad, DistillConfig, DistillLoss, Layout, Regularization};
use stragglersim_core::verify::{
    average_grad_norm, check_lemma1_recursion, check_lemma2_variance, check_lemma3_gap_bound, check_zero_mean_gap,
    run_feast_quad, theorem1_rhs, theorem1_schedule, QuadClientSet, QuadRunConfig, QuadSetConfig,
};
use stragglersim_core::{
    run_experiment, run_on_dataset, ExperimentConfig, FederatedDataset, LatencyScenario, LognormalParams, ParamVector,
    RunOptions,
};

const GRAD_REL_TOL: f64 = 1e-6;
const GRAD_FD_STEP: f64 = 1e-5;
/// Relative errors are taken against `max(|analytic|, |fd|, floor)`.
const GRAD_REL_FLOOR: f64 = 1e-3;
const RECURSION_TOL: f64 = 1e-9;
const ZERO_MEAN_FRACTION: f64 = 0.99;
const TRAJECTORY_TOL: f64 = 1e-12;
const MEDIAN_REL_TOL: f64 = 0.01;
const STRAGGLER_DROP_MIN: f64 = 0.05;
const STRAGGLER_GAIN_MIN: f64 = 0.10;
const TIME_RATIO_MAX: f64 = 0.5;
const TREND_RATIO_MAX: f64 = 0.5;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() < limit
}

fn quad_set() -> QuadClientSet {
    QuadClientSet::generate(&QuadSetConfig::default(), 0).unwrap()
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d_in = rng.random_range(1..8);
        let k = rng.random_range(2..7);
        let layout = if seed % 2 == 0 {
            Layout::linear(d_in, k)
        } else {
            Layout::mlp(d_in, rng.random_range(1..8), k)
        };
        let w = init_params(&layout, 1.0, &mut rng);
        let n = rng.random_range(1..10);
        let batch: Vec<Example> = (0..n)
            .map(|_| Example {
                features: (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect(),
                label: rng.random_range(0..k),
            })
            .collect();
        let refs: Vec<&Example> = batch.iter().collect();
        let rho = if seed % 3 != 0 { rng.random_range(0.05..2.0) } else { 0.0 };
        let nu = if seed % 4 < 2 { rng.random_range(0.05..2.0) } else { 0.0 };
        let teacher: Option<Vec<Vec<f64>>> =
            (rho > 0.0).then(|| (0..n).map(|_| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect()).collect());
        let anchor = (nu > 0.0).then(|| init_params(&layout, 1.0, &mut rng));
        let distill = DistillConfig {
            loss: if seed % 5 == 0 { DistillLoss::LogitMse } else { DistillLoss::SoftCrossEntropy },
            temperature: if seed % 7 == 0 { 2.0 } else { 1.0 },
        };
        let reg = Regularization {
            teacher_logits: teacher.as_deref(),
            anchor: anchor.as_ref(),
            rho,
            nu,
            distill,
        };
        let f = |w: &ParamVector| loss_and_grad(&layout, w, &refs, &reg).unwrap().0.total;
        let (_, g) = loss_and_grad(&layout, &w, &refs, &reg).unwrap();
        for j in 0..w.len() {
            let mut p = w.clone();
            p[j] += GRAD_FD_STEP;
            let mut q = w.clone();
            q[j] -= GRAD_FD_STEP;
            let fd = (f(&p) - f(&q)) / (2.0 * GRAD_FD_STEP);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(GRAD_REL_FLOOR));
        }
    }
    let pass = worst <= GRAD_REL_TOL && within(start, Duration::from_secs(10));
    report(1, pass, format!("100 configs, worst relative error {worst:.2e} (tol {GRAD_REL_TOL:e}), {:.2?}", start.elapsed()));
    assert!(pass);
}

#[test]
fn criterion_02_recursion() {
    let start = Instant::now();
    let set = quad_set();
    let cfg = QuadRunConfig {
        b: 2,
        b_plus: 4,
        rounds: 50,
        ..Default::default()
    };
    assert_eq!(cfg.eta_a, cfg.eta_g);
    let traces: Vec<_> = (0..5).map(|s| run_feast_quad(&set, &cfg, s).unwrap()).collect();
    let r = check_lemma1_recursion(&traces, RECURSION_TOL).unwrap();
    let pass = r.passed() && within(start, Duration::from_secs(30));
    report(2, pass, format!("5 seeds x 50 rounds, max relative error {:.2e} (tol {RECURSION_TOL:e})", r.measured));
    assert!(pass);
}

#[test]
fn criterion_03_zero_mean_gap() {
    let start = Instant::now();
    let r = check_zero_mean_gap(&quad_set(), &QuadRunConfig::default(), &seeds(200)).unwrap();
    let pass = r.passed() && r.measured >= ZERO_MEAN_FRACTION && within(start, Duration::from_secs(120));
    report(3, pass, format!("200 seeds, {:.1}% of coordinates within 3 SE; {}", 100.0 * r.measured, r.detail));
    assert!(pass);
}

#[test]
fn criterion_04_gap_bound() {
    let start = Instant::now();
    let set = quad_set();
    let cfg = QuadRunConfig::default();
    let r = check_lemma3_gap_bound(&set, &cfg, &seeds(100), 1.0).unwrap();
    let every_round = r.series.iter().all(|p| p.value <= p.bound);
    let pass = r.passed() && every_round && within(start, Duration::from_secs(120));
    report(4, pass, format!("100 seeds, max over t of mean+3SE {:.4e} <= bound {:.4e}", r.measured, r.bound));
    assert!(pass);
}

#[test]
fn criterion_05_variance_bound() {
    let start = Instant::now();
    let r = check_lemma2_variance(&quad_set(), 100_000, 0).unwrap();
    let pass = r.passed() && within(start, Duration::from_secs(10));
    report(
        5,
        pass,
        format!("1e5 draws, mean |g|^2 {:.5} <= sigma^2+G^2 {:.5} + 3 SE ({:.2e})", r.measured, r.bound, r.se.unwrap()),
    );
    assert!(pass);
}

#[test]
fn criterion_06_schedule_trend() {
    let set = quad_set();
    let base = QuadRunConfig::default();
    let a = set.assumptions();
    let w0 = ParamVector::from_vec(vec![base.init; set.dim()]);
    let f_gap = set.loss(&w0) - a.f_star;
    let s = seeds(200);
    let (lhs64, _) = average_grad_norm(&set, &theorem1_schedule(&base, 64), &s).unwrap();
    let (lhs1024, _) = average_grad_norm(&set, &theorem1_schedule(&base, 1024), &s).unwrap();
    let rhs64 = theorem1_rhs(64, f_gap, &a);
    let rhs1024 = theorem1_rhs(1024, f_gap, &a);
    let ratio = lhs1024 / lhs64;
    let pass = ratio <= TREND_RATIO_MAX && lhs64 <= rhs64 && lhs1024 <= rhs1024;
    report(
        6,
        pass,
        format!("T=64 {lhs64:.4e} (rhs {rhs64:.3e}), T=1024 {lhs1024:.4e} (rhs {rhs1024:.3e}), ratio {ratio:.3}"),
    );
    assert!(pass);
}

fn small_experiment(algo: AlgoConfig, budget: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(algo);
    cfg.dataset = DataConfig {
        m_clients: 80,
        n_straggler_clients: 16,
        d_in: 6,
        size_distribution: LognormalParams::new(12f64.ln(), 0.4),
        n_eval: 300,
        ..DataConfig::default()
    };
    cfg.budget = budget;
    cfg
}

fn traj_diff(a: &[ParamVector], b: &[ParamVector]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

#[test]
fn criterion_07_reductions() {
    let opts = RunOptions {
        record_trajectory: true,
        record_rounds: false,
    };
    let mut fd = AlgoConfig::defaults(Algorithm::FareDust);
    fd.cohort = 4;
    fd.cohort_over = 6;
    fd.rho = 0.0;
    let mut avg = AlgoConfig::defaults(Algorithm::FedAvg);
    avg.cohort = 4;
    avg.cohort_over = 6;
    avg.server_optimizer = fd.server_optimizer;
    avg.eta_g = fd.eta_g;
    avg.eta_l = fd.eta_l;
    let mut cfg_fd = small_experiment(fd, 400);
    cfg_fd.dataset.straggler_classes = vec![0];
    cfg_fd.dataset.n_straggler_clients = 0;
    let mut cfg_avg = small_experiment(avg, 400);
    cfg_avg.dataset = cfg_fd.dataset.clone();
    let data = FederatedDataset::build(&cfg_fd.dataset, 3).unwrap();
    assert!(data.shards.iter().all(|s| !s.is_straggler));
    let a = run_on_dataset(&cfg_fd, &data, 3, opts).unwrap();
    let b = run_on_dataset(&cfg_avg, &data, 3, opts).unwrap();
    let d1 = traj_diff(&a.trace.w_trajectory, &b.trace.w_trajectory);
    let rounds1 = a.trace.w_trajectory.len() - 1;

    let mut f = AlgoConfig::defaults(Algorithm::Feast);
    f.cohort = 4;
    f.cohort_over = 4;
    f.eta_g = 1.0;
    f.eta_a = 1.0;
    let cfg = small_experiment(f, 400);
    let out = run_experiment(&cfg, 4, opts).unwrap();
    let d2 = traj_diff(&out.trace.w_trajectory, &out.trace.aux_trajectory);
    let rounds2 = out.trace.w_trajectory.len() - 1;

    let pass = rounds1 == 100 && rounds2 == 100 && d1 <= TRAJECTORY_TOL && d2 <= TRAJECTORY_TOL;
    report(
        7,
        pass,
        format!("fare_dust(rho=0) vs fedavg+over-selection max diff {d1:.1e}; feast(B+=B) aux vs global {d2:.1e}; 100 rounds each"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_latency_fidelity() {
    // Part 1: deterministic factors, brute-force round durations.
    let profile = LatencyProfile::deterministic(7.0, 0.3, 2.0);
    let mut ok_rounds = true;
    let mut n_rounds = 0;
    for (cohort, over) in [(5, 5), (4, 7)] {
        let mut a = AlgoConfig::defaults(Algorithm::FedAvg);
        a.cohort = cohort;
        a.cohort_over = over;
        let mut cfg = small_experiment(a, 200);
        cfg.latency = LatencyScenario::uniform(profile);
        let data = FederatedDataset::build(&cfg.dataset, 9).unwrap();
        let out = run_on_dataset(&cfg, &data, 9, RunOptions { record_trajectory: false, record_rounds: true }).unwrap();
        let lat = |cid: usize| {
            let n = data.shards.iter().find(|s| s.client_id == cid).unwrap().len();
            profile.comm.median() + profile.overhead.median() + profile.per_example.median() * n as f64
        };
        for r in &out.trace.rounds {
            let mut l: Vec<f64> = r.cohort.iter().map(|d| lat(d.client_id)).collect();
            l.sort_by(f64::total_cmp);
            ok_rounds &= r.closed_at == r.started_at + l[cohort - 1];
            n_rounds += 1;
        }
    }
    // Part 2: medians of the reference factor distributions.
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in [LatencyProfile::PE_STANDARD, LatencyProfile::PDPE_STANDARD, LatencyProfile::PDPE_STRAGGLER] {
        for f in [p.comm, p.per_example, p.overhead] {
            let mut v: Vec<f64> = (0..1_000_000).map(|_| sample_lognormal(f, &mut rng).unwrap()).collect();
            v.sort_by(f64::total_cmp);
            let median = 0.5 * (v[499_999] + v[500_000]);
            worst = worst.max((median / f.mu.exp() - 1.0).abs());
        }
    }
    let pass = ok_rounds && worst <= MEDIAN_REL_TOL;
    report(
        8,
        pass,
        format!("{n_rounds} sigma=0 rounds match brute force exactly: {ok_rounds}; worst median error {:.3}% over 9 factors x 1e6 draws", 100.0 * worst),
    );
    assert!(pass);
}

struct Arm {
    label: &'static str,
    json: &'static str,
}

const ARMS: [Arm; 5] = [
    Arm { label: "fedavg", json: r#"{"algorithm": "fedavg", "cohort": 50, "cohort_over": 50}"# },
    Arm { label: "fedavg+over-selection", json: r#"{"algorithm": "fedavg", "cohort": 50, "cohort_over": 60}"# },
    Arm { label: "fare_dust", json: r#"{"algorithm": "fare_dust", "cohort": 50, "cohort_over": 60, "eta_g": 0.03, "beta": 0.9}"# },
    Arm { label: "feast", json: r#"{"algorithm": "feast", "cohort": 50, "cohort_over": 60, "eta_g": 1.0}"# },
    Arm { label: "fedadam+over-selection (reference)", json: r#"{"algorithm": "fedadam", "cohort": 50, "cohort_over": 60, "eta_g": 0.03, "beta": 0.9}"# },
];

#[test]
fn criterion_09_directional_replication() {
    let start = Instant::now();
    let mut summaries = Vec::new();
    for arm in &ARMS {
        let cfg = ExperimentConfig::from_json_str(&format!(r#"{{"name": "{}", "algo": {}, "budget": 5000}}"#, arm.label, arm.json)).unwrap();
        assert_eq!(cfg.dataset.m_clients, 400);
        assert_eq!(cfg.dataset.straggler_classes, vec![0, 1, 2, 3, 4]);
        let finals: Vec<TrialFinal> = (0..10u64)
            .map(|seed| {
                let s = run_experiment(&cfg, seed, RunOptions::default()).unwrap().summary;
                TrialFinal {
                    total_acc: s.final_total_acc,
                    straggler_acc: s.final_straggler_acc,
                    total_time_s: s.total_time_s,
                }
            })
            .collect();
        let s = summarize_trials(&finals).unwrap();
        let st = s.straggler_acc.unwrap();
        println!(
            "  {:<36} straggler {:.3} [{:.3}, {:.3}]  total {:.3}  time {:.0} s",
            arm.label, st.median, st.lo, st.hi, s.total_acc.median, s.total_time_s.median
        );
        summaries.push(s);
    }
    let st = |i: usize| summaries[i].straggler_acc.unwrap();
    let time = |i: usize| summaries[i].total_time_s.median;
    let drop = st(0).median - st(1).median;
    let a = drop >= STRAGGLER_DROP_MIN;
    let gain_fd = st(2).median - st(1).median;
    let gain_feast = st(3).median - st(1).median;
    let b = gain_fd >= STRAGGLER_GAIN_MIN
        && gain_feast >= STRAGGLER_GAIN_MIN
        && !st(2).overlaps(&st(1))
        && !st(3).overlaps(&st(1));
    let ratio_fd = time(2) / time(0);
    let ratio_feast = time(3) / time(0);
    let c = ratio_fd <= TIME_RATIO_MAX && ratio_feast <= TIME_RATIO_MAX;
    let pass = a && b && c && within(start, Duration::from_secs(900));
    report(
        9,
        pass,
        format!(
            "(a) over-selection drop {:.1} pts: {a}; (b) gains fare_dust {:.1} / feast {:.1} pts, bands disjoint: {b}; (c) time ratios {ratio_fd:.2} / {ratio_feast:.2}: {c}",
            100.0 * drop,
            100.0 * gain_fd,
            100.0 * gain_feast
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        ("feast", r#"{"name": "feast", "dataset": {"m_clients": 80, "n_straggler_clients": 20, "n_eval": 300}, "algo": {"algorithm": "feast", "cohort": 8}, "budget": 200, "trials": 2}"#),
        ("fedbuff", r#"{"name": "fedbuff", "dataset": {"m_clients": 80, "n_straggler_clients": 20, "n_eval": 300}, "algo": {"algorithm": "fedbuff", "buffer_size": 5, "max_concurrency": 20, "rho": 0.1, "beta": 0.9}, "budget": 200, "trials": 2}"#),
        ("fare_dust", r#"{"name": "fare_dust", "dataset": {"m_clients": 80, "n_straggler_clients": 20, "n_eval": 300}, "algo": {"algorithm": "fare_dust", "cohort": 8}, "budget": 200, "trials": 2}"#),
    ];
    let mut identical = true;
    let mut files = 0;
    for (name, text) in configs {
        fs::write(dir.path().join(format!("{name}.json")), text).unwrap();
        for (tag, jobs) in [("a", "1"), ("b", "1"), ("c", "4")] {
            let status = Command::new(env!("CARGO_BIN_EXE_stragglersim"))
                .current_dir(dir.path())
                .args(["simulate", "--config", &format!("{name}.json"), "--seed", "11", "--jobs", jobs, "--out", &format!("{tag}/{name}.jsonl")])
                .status()
                .unwrap();
            assert!(status.success());
        }
        for i in 0..2 {
            let read = |tag: &str| fs::read(dir.path().join(format!("{tag}/{name}_{i}.jsonl"))).unwrap();
            let a = read("a");
            identical &= a == read("b") && a == read("c");
            files += 1;
        }
        let ma = fs::read(dir.path().join(format!("a/{name}.manifest.json"))).unwrap();
        identical &= ma == fs::read(dir.path().join(format!("c/{name}.manifest.json"))).unwrap();
    }
    report(10, identical, format!("{files} logs byte-identical across reruns and --jobs 1 vs 4: {identical}"));
    assert!(identical);
}
