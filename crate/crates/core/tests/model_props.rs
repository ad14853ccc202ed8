use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stragglersim_core::data::Example;
use stragglersim_core::model::{
    forward_batch, init_params, loss_and_grad, softmax, DistillConfig, DistillLoss, Layout, Regularization,
};
use stragglersim_core::ParamVector;

struct Instance {
    layout: Layout,
    w: ParamVector,
    batch: Vec<Example>,
    teacher: Option<Vec<Vec<f64>>>,
    anchor: Option<ParamVector>,
    rho: f64,
    nu: f64,
    distill: DistillConfig,
}

fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_in = rng.random_range(1..6);
    let k = rng.random_range(2..6);
    let layout = if rng.random_bool(0.5) {
        Layout::linear(d_in, k)
    } else {
        Layout::mlp(d_in, rng.random_range(1..6), k)
    };
    let w = init_params(&layout, 1.0, &mut rng);
    let n = rng.random_range(1..8);
    let batch: Vec<Example> = (0..n)
        .map(|_| Example {
            features: (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect(),
            label: rng.random_range(0..k),
        })
        .collect();
    let rho = if rng.random_bool(0.6) { rng.random_range(0.1..2.0) } else { 0.0 };
    let nu = if rng.random_bool(0.5) { rng.random_range(0.1..2.0) } else { 0.0 };
    let teacher = (rho > 0.0).then(|| {
        (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    });
    let anchor = (nu > 0.0).then(|| init_params(&layout, 1.0, &mut rng));
    let distill = DistillConfig {
        loss: if rng.random_bool(0.7) {
            DistillLoss::SoftCrossEntropy
        } else {
            DistillLoss::LogitMse
        },
        temperature: if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.5..3.0) },
    };
    Instance {
        layout,
        w,
        batch,
        teacher,
        anchor,
        rho,
        nu,
        distill,
    }
}

fn total(inst: &Instance, w: &ParamVector) -> f64 {
    let refs: Vec<&Example> = inst.batch.iter().collect();
    let reg = Regularization {
        teacher_logits: inst.teacher.as_deref(),
        anchor: inst.anchor.as_ref(),
        rho: inst.rho,
        nu: inst.nu,
        distill: inst.distill,
    };
    loss_and_grad(&inst.layout, w, &refs, &reg).unwrap().0.total
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let inst = random_instance(seed);
        let refs: Vec<&Example> = inst.batch.iter().collect();
        let reg = Regularization {
            teacher_logits: inst.teacher.as_deref(),
            anchor: inst.anchor.as_ref(),
            rho: inst.rho,
            nu: inst.nu,
            distill: inst.distill,
        };
        let (_, g) = loss_and_grad(&inst.layout, &inst.w, &refs, &reg).unwrap();
        for j in 0..inst.w.len() {
            let mut p = inst.w.clone();
            p[j] += h;
            let mut q = inst.w.clone();
            q[j] -= h;
            let fd = (total(&inst, &p) - total(&inst, &q)) / (2.0 * h);
            let rel = (fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}

fn entropy(logits: &[f64]) -> f64 {
    softmax(logits).iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distillation_bounded_by_teacher_entropy(seed in 0u64..10_000, equal in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::linear(3, 4);
        let w = init_params(&layout, 1.0, &mut rng);
        let batch: Vec<Example> = (0..5)
            .map(|_| Example { features: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(), label: rng.random_range(0..4) })
            .collect();
        let refs: Vec<&Example> = batch.iter().collect();
        let student = forward_batch(&layout, &w, &refs).unwrap();
        let teacher: Vec<Vec<f64>> = if equal {
            // a constant shift leaves the softmax unchanged
            student.iter().map(|z| z.iter().map(|v| v + 1.5).collect()).collect()
        } else {
            student.iter().map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
        };
        let reg = Regularization { teacher_logits: Some(&teacher), anchor: None, rho: 1.0, nu: 0.0, distill: DistillConfig::default() };
        let (loss, _) = loss_and_grad(&layout, &w, &refs, &reg).unwrap();
        let h = teacher.iter().map(|z| entropy(z)).sum::<f64>() / teacher.len() as f64;
        prop_assert!(loss.distill >= h - 1e-12);
        if equal {
            prop_assert!((loss.distill - h).abs() <= 1e-12);
        } else {
            prop_assert!(loss.distill > h);
        }
    }

    #[test]
    fn loss_invariant_to_batch_order(seed in 0u64..10_000) {
        let inst = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut order: Vec<usize> = (0..inst.batch.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let refs: Vec<&Example> = inst.batch.iter().collect();
        let perm: Vec<&Example> = order.iter().map(|&i| &inst.batch[i]).collect();
        let perm_teacher: Option<Vec<Vec<f64>>> = inst.teacher.as_ref().map(|t| order.iter().map(|&i| t[i].clone()).collect());
        let reg_a = Regularization { teacher_logits: inst.teacher.as_deref(), anchor: inst.anchor.as_ref(), rho: inst.rho, nu: inst.nu, distill: inst.distill };
        let reg_b = Regularization { teacher_logits: perm_teacher.as_deref(), ..reg_a };
        let (a, ga) = loss_and_grad(&inst.layout, &inst.w, &refs, &reg_a).unwrap();
        let (b, gb) = loss_and_grad(&inst.layout, &inst.w, &perm, &reg_b).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-12 * a.total.abs().max(1.0));
        prop_assert!(ga.max_abs_diff(&gb) <= 1e-12);
    }
}
