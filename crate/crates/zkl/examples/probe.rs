// Scratch measurement harness used while pinning acceptance constants.
use zkl::dynamics::{
    actual_dynamics, dynamics_residual, predict_dynamics, DynamicsDecomposition,
};
use zkl::experiment::{
    log_log_slope, run_kernel_compare, run_trajectory_experiment, run_v_scaling,
    KernelCompareConfig, TrajectoryConfig, VScalingConfig,
};
use zkl::kernel::{fo_entk, kernel_discrepancy, zo_entk};
use zkl::linalg;
use zkl::model::{self, MlpConfig};
use zkl::optim::{fo_sgd_step, zo_sgd_step, OptimConfig};
use zkl::rng::{build_projection, PerturbationDistribution};

fn c7_unbiasedness() {
    let cfg = MlpConfig::new(16, vec![10], 3).with_seed(14);
    let theta = model::init_params(&cfg).unwrap();
    println!("c7: d = {}", theta.len());
    let data = zkl::data::synth_blobs(3, 16, 2, 2.0, 3).unwrap();
    for (xo, xu, label) in [
        (0usize, 0usize, "self"),
        (0, 1, "cross"),
    ] {
        let j_o = model::jacobian_logits(&theta, &cfg, &data.inputs[xo]).unwrap();
        let j_u = model::jacobian_logits(&theta, &cfg, &data.inputs[xu]).unwrap();
        let fo = fo_entk(&j_o, &j_u).unwrap();
        for p in [1usize, 4] {
            let mut acc = linalg::Matrix::zeros(3, 3);
            for seed in 0..10_000u64 {
                let u = build_projection(seed, 0, theta.len(), p, PerturbationDistribution::Gaussian)
                    .unwrap();
                let zo = zo_entk(&j_o, &j_u, &u).unwrap();
                acc = acc.add(zo.entries()).unwrap();
            }
            let mean = acc.scale(1.0 / 10_000.0);
            let rel = linalg::frobenius_norm(&mean.sub(fo.entries()).unwrap())
                / linalg::frobenius_norm(fo.entries());
            println!("c7 {label} P={p}: rel error of mean = {rel:.5}");
        }
    }
}

fn c8_c9_decay_parity() {
    let cfg = KernelCompareConfig::default();
    let t0 = std::time::Instant::now();
    let out = run_kernel_compare(&cfg).unwrap();
    println!("c8/c9 runtime: {:.1?}s", t0.elapsed());
    for slope in &out.slopes {
        println!("c8 slope {} {}: {:.4}", slope.pair_id, slope.distribution, slope.slope);
    }
    for p in &cfg.p_sweep {
        let g = out
            .medians
            .iter()
            .find(|m| m.perturbations == *p && m.distribution == "gaussian")
            .unwrap();
        let r = out
            .medians
            .iter()
            .find(|m| m.perturbations == *p && m.distribution == "rademacher")
            .unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.min(b);
        println!(
            "c9 P={p}: fro {:.4}/{:.4} ({:.1}%), cka {:.4}/{:.4} ({:.1}%), spec {:.4}/{:.4} ({:.1}%)",
            g.rel_frobenius, r.rel_frobenius, 100.0 * rel(g.rel_frobenius, r.rel_frobenius),
            g.cka_error, r.cka_error, 100.0 * rel(g.cka_error, r.cka_error),
            g.spectral_distance, r.spectral_distance, 100.0 * rel(g.spectral_distance, r.spectral_distance),
        );
    }
}

fn c10_v_scaling() {
    let variants: Vec<(&str, VScalingConfig)> = vec![

        (
            "in8-h128-sep1",
            VScalingConfig {
                input_dim: 8,
                hidden_dims: vec![128],
                separation: 1.0,
                ..VScalingConfig::default()
            },
        ),
        (
            "in4-h128-sep0.5",
            VScalingConfig {
                input_dim: 4,
                hidden_dims: vec![128],
                separation: 0.5,
                ..VScalingConfig::default()
            },
        ),
        (
            "in8-h192-sep1",
            VScalingConfig {
                input_dim: 8,
                hidden_dims: vec![192],
                separation: 1.0,
                ..VScalingConfig::default()
            },
        ),
    ];
    for (name, cfg) in variants {
        let t0 = std::time::Instant::now();
        let out = run_v_scaling(&cfg).unwrap();
        print!("c10 [{name}] ({:.1?}):", t0.elapsed());
        for (v, _, _, rel) in &out.medians {
            print!(" V{v}={rel:.3}");
        }
        let rel_of = |v: usize| out.medians.iter().find(|m| m.0 == v).unwrap().3;
        let ratio = rel_of(1000) / rel_of(10);
        let predicted = (1000.0f64 * 1000.0f64.ln()).sqrt() / (10.0f64 * 10.0f64.ln()).sqrt();
        println!(
            " | ratio {ratio:.2} predicted {predicted:.2} factor {:.2}",
            ratio / predicted
        );
    }
}

fn c11_c12_dynamics(seed: u64) {
    let cfg = MlpConfig::new(64, vec![128], 10).with_seed(seed);
    let theta = model::init_params(&cfg).unwrap();
    let data = zkl::data::synth_blobs(10, 64, 1, 3.0, seed + 100).unwrap();
    let x_o = &data.inputs[0];
    let x_u = &data.inputs[1];
    let y_u = 1usize;

    let j_o = model::jacobian_logits(&theta, &cfg, x_o).unwrap();
    let j_u = model::jacobian_logits(&theta, &cfg, x_u).unwrap();
    let pi_o = model::softmax(&model::forward_logits(&theta, &cfg, x_o).unwrap());
    let z_u = model::forward_logits(&theta, &cfg, x_u).unwrap();
    let g = model::grad_loss_logits(&z_u, y_u).unwrap();
    let grad = model::grad_loss_params(&theta, &cfg, x_u, y_u).unwrap();

    let fo_residual = |eta: f64| -> f64 {
        let k = fo_entk(&j_o, &j_u).unwrap();
        let decomp = DynamicsDecomposition::new(&pi_o, k, g.clone(), eta).unwrap();
        let predicted = predict_dynamics(&decomp).unwrap();
        let theta_next = fo_sgd_step(&theta, &grad, eta).unwrap();
        let actual = actual_dynamics(&theta, &theta_next, &cfg, x_o).unwrap();
        dynamics_residual(&predicted, &actual).unwrap()
    };
    let r1 = fo_residual(2e-3);
    let r2 = fo_residual(1e-3);
    println!("c11 seed={seed} FO ratio = {:.3} (r(2e-3)={r1:.3e})", r1 / r2);

    let zo_pieces = |eta: f64| -> (Vec<f64>, Vec<f64>) {
        let ocfg = OptimConfig {
            eta,
            mu: 1e-5,
            perturbations: 8,
            distribution: PerturbationDistribution::Gaussian,
            steps: 1,
            master_seed: seed + 7,
        };
        let lossfn = |p: &[f64]| model::loss_on_sample(p, &cfg, x_u, y_u).unwrap();
        let (theta_next, u) = zo_sgd_step(lossfn, &theta, &ocfg, 0).unwrap();
        let k_zo = zo_entk(&j_o, &j_u, &u).unwrap();
        let decomp = DynamicsDecomposition::new(&pi_o, k_zo, g.clone(), eta).unwrap();
        let predicted = predict_dynamics(&decomp).unwrap();
        let actual = actual_dynamics(&theta, &theta_next, &cfg, x_o).unwrap();
        (predicted, actual)
    };
    let zr1 = {
        let (p, a) = zo_pieces(2e-3);
        dynamics_residual(&p, &a).unwrap()
    };
    let zr2 = {
        let (p, a) = zo_pieces(1e-3);
        dynamics_residual(&p, &a).unwrap()
    };
    println!("c11 seed={seed} ZO ratio = {:.3} (r(2e-3)={zr1:.3e})", zr1 / zr2);

    // Criterion 12: difference identity.
    let diff_err = |eta: f64| -> f64 {
        let ocfg = OptimConfig {
            eta,
            mu: 1e-5,
            perturbations: 8,
            distribution: PerturbationDistribution::Gaussian,
            steps: 1,
            master_seed: seed + 7,
        };
        let lossfn = |p: &[f64]| model::loss_on_sample(p, &cfg, x_u, y_u).unwrap();
        let (theta_zo, u) = zo_sgd_step(lossfn, &theta, &ocfg, 0).unwrap();
        let theta_fo = fo_sgd_step(&theta, &grad, eta).unwrap();
        let delta_fo = actual_dynamics(&theta, &theta_fo, &cfg, x_o).unwrap();
        let delta_zo = actual_dynamics(&theta, &theta_zo, &cfg, x_o).unwrap();
        let measured: Vec<f64> = delta_fo.iter().zip(&delta_zo).map(|(a, b)| a - b).collect();

        let k_fo = fo_entk(&j_o, &j_u).unwrap();
        let k_zo = zo_entk(&j_o, &j_u, &u).unwrap();
        let dk = kernel_discrepancy(&k_fo, &k_zo).unwrap();
        let a_mat = zkl::dynamics::belief_update_matrix(&pi_o);
        let dkg = dk.matvec(&g).unwrap();
        let adkg = a_mat.matvec(&dkg).unwrap();
        let predicted: Vec<f64> = adkg.iter().map(|v| -eta * v).collect();
        dynamics_residual(&predicted, &measured).unwrap()
    };
    let d1 = diff_err(2e-3);
    let d2 = diff_err(1e-3);
    println!("c12 seed={seed} ratio = {:.3} (err(2e-3)={d1:.3e})", d1 / d2);
}

fn c15_trajectory() {
    let cfg = TrajectoryConfig::default();
    let t0 = std::time::Instant::now();
    let out = run_trajectory_experiment(&cfg).unwrap();
    println!("c15 runtime: {:.1?}", t0.elapsed());
    for (p, dist, gap) in &out.median_gaps {
        println!("c15 P={p} {dist}: median final gap = {gap:.5}");
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    match which.as_str() {
        "c7" => c7_unbiasedness(),
        "c89" => c8_c9_decay_parity(),
        "c10" => c10_v_scaling(),
        "c11" => {
            for seed in [1u64, 2, 3, 4, 5] {
                c11_c12_dynamics(seed);
            }
        }
        "c15" => c15_trajectory(),
        _ => {
            c7_unbiasedness();
            c8_c9_decay_parity();
            c10_v_scaling();
            for seed in [1u64, 2, 3] {
                c11_c12_dynamics(seed);
            }
            c15_trajectory();
        }
    }
    let _ = log_log_slope(&[(1.0, 1.0), (2.0, 0.5)]);
}
