//! One PASS/FAIL line per acceptance criterion; exits non-zero on any failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fl_lrbc::crypto::{
    ct_add, ct_scalar_mul, decrypt, decrypt_encoded, encrypt, keygen, EncodedNumber,
    DEFAULT_EXPONENT,
};
use fl_lrbc::dataio::align;
use fl_lrbc::fedproto::{
    audit_privacy, check_flow, guest_compute, host_forward, run_threaded, setup, FederatedOutcome,
    PrivacyContext, ProtocolConfig,
};
use fl_lrbc::lrbc::{
    exact_gradient, exact_loss, kkt_residual, taylor_gradient, taylor_loss_at, train_centralized,
    BoxBounds, LabeledBatch, LossKind, StopReason, TrainConfig, Weights,
};
use fl_lrbc::matrix::Matrix;
use fl_lrbc::metrics::{ks, roc_auc, scored};
use fl_lrbc::pipeline::{cmd_gen_synth, cmd_train, Mode, Overrides, RunConfig, RUN_TOML};
use fl_lrbc::sampling::{guest_initial_weights, host_initial_weights};
use fl_lrbc::synth::{generate, SynthSpec};
use fl_lrbc::woe::{fit_view, transform};
use rand::Rng;
use tempfile::TempDir;

mod common;

struct Ledger {
    failures: usize,
    /// Smallest coefficient seen in any iterate of any run.
    min_coefficient: f64,
    /// (runs audited, violations found).
    privacy: (usize, usize),
}

impl Ledger {
    fn report(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }

    fn track(&mut self, trajectory: &[Weights]) {
        for w in trajectory {
            self.min_coefficient = self.min_coefficient.min(w.min_coefficient());
        }
    }

    fn audit(&mut self, out: &FederatedOutcome, rows: usize, host_dim: usize, sensitive: &[f64]) {
        let key = out.parties.coordinator.private_key();
        let secrets = key.secret_bytes();
        let report = audit_privacy(
            &out.transcript,
            &PrivacyContext {
                public_key: key.public_key(),
                secrets: &secrets,
                rows,
                host_dim,
                sensitive_values: sensitive,
            },
        );
        let flow = usize::from(check_flow(&out.transcript).is_err());
        self.privacy.0 += 1;
        self.privacy.1 += report.violations.len() + flow;
    }
}

fn homomorphic(l: &mut Ledger) {
    let start = Instant::now();
    let mut r = common::rng(100);
    let keys = keygen(512, &mut r).unwrap();
    let mantissa = |x: f64, e: i32| {
        EncodedNumber::encode(x)
            .unwrap()
            .decrease_exponent_to(e)
            .unwrap()
            .mantissa
    };
    let mut wrong = 0;
    for _ in 0..1000 {
        let (u, v, k): (f64, f64, f64) = (
            r.gen_range(-1e6..1e6),
            r.gen_range(-1e6..1e6),
            r.gen_range(-1e3..1e3),
        );
        let (eu, ev) = (
            encrypt(&keys.public, u, &mut r).unwrap(),
            encrypt(&keys.public, v, &mut r).unwrap(),
        );
        let sum = decrypt_encoded(&keys.private, &ct_add(&eu, &ev).unwrap()).unwrap();
        let prod = decrypt_encoded(&keys.private, &ct_scalar_mul(&eu, k).unwrap()).unwrap();
        let e = DEFAULT_EXPONENT;
        if sum.mantissa != mantissa(u, e) + mantissa(v, e)
            || prod.mantissa != mantissa(u, e) * mantissa(k, e)
        {
            wrong += 1;
        }
    }
    let elapsed = start.elapsed();
    l.report(
        "homomorphic correctness",
        wrong == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{wrong}/1000 triples inexact, {:.1}s with 512-bit keys (limit 60s)",
            elapsed.as_secs_f64()
        ),
    );
}

fn encrypted_loss(l: &mut Ledger) {
    let mut r = common::rng(200);
    let keys = keygen(512, &mut r).unwrap();
    let pk = Arc::clone(&keys.public);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (na, nb) = (r.gen_range(1..5), r.gen_range(1..4));
        let mut cells = |n: usize| {
            Matrix::from_rows(
                &(0..64)
                    .map(|_| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
                    .collect::<Vec<_>>(),
            )
        };
        let (xa, xb) = (cells(na), cells(nb));
        let labels: Vec<u8> = (0..64).map(|_| r.gen_range(0..2)).collect();
        let wa: Vec<f64> = (0..na).map(|_| r.gen_range(0.0..1.0)).collect();
        let wb = Weights::new(
            (0..nb).map(|_| r.gen_range(0.0..1.0)).collect(),
            r.gen_range(-1.0..1.0),
        );
        let batch = LabeledBatch::from_binary(xa.hconcat(&xb), &labels).unwrap();
        let (s, q) = host_forward(&pk, &xa, &wa, &mut r).unwrap();
        let round = guest_compute(&pk, &s, &q, &xb, &wb, &batch.y, &mut r).unwrap();
        let joint = Weights::new([wa, wb.w.clone()].concat(), wb.b);
        let plain = taylor_loss_at(&joint, &batch).unwrap();
        worst = worst.max((decrypt(&keys.private, &round.loss).unwrap() - plain).abs());
    }
    l.report(
        "encrypted/plaintext loss agreement",
        worst < 1e-9,
        format!("max |decrypted - plaintext| = {worst:.2e} over 50 batches of 64 (limit 1e-9)"),
    );
}

fn federated_equivalence(l: &mut Ledger) {
    let spec = SynthSpec {
        n_samples: 2000,
        host_informative: 5,
        guest_informative: 3,
        noise_features: 1,
        unmatched_fraction: 0.0,
        seed: 300,
        ..SynthSpec::default()
    };
    let synth = generate(&spec).unwrap();
    let (host, guest) = align(&synth.host, &synth.guest).unwrap();
    let labels = guest.labels.clone().unwrap();
    let woe = |v| {
        transform(v, &fit_view(v, &labels, 10).unwrap())
            .unwrap()
            .values
    };
    let (xa, xb) = (woe(&host), woe(&guest));
    let (na, nb) = (xa.cols(), xb.cols());

    let train = TrainConfig {
        eta: 0.5,
        tol_loss: 0.0,
        tol_w: 0.0,
        max_iter: 100,
        seed: 301,
        ..TrainConfig::default()
    };
    let pc = ProtocolConfig::new(train.clone())
        .with_key_bits(512)
        .with_crypto_seed(302);
    let start = Instant::now();
    let parties = setup(&pc, xa.clone(), xb.clone(), &labels).unwrap();
    let out = run_threaded(parties, pc.timeout).unwrap();
    let elapsed = start.elapsed();

    let joint = LabeledBatch::from_binary(xa.hconcat(&xb), &labels).unwrap();
    let init = Weights::new(
        [
            host_initial_weights(na, 301),
            guest_initial_weights(nb, 301),
        ]
        .concat(),
        0.0,
    );
    let central =
        train_centralized(&joint, &train, &BoxBounds::nonnegative(na + nb), Some(init)).unwrap();
    let fed = out.combined_trajectory();
    let worst = fed
        .iter()
        .zip(&central.trajectory)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    l.track(&fed);
    l.track(&central.trajectory);
    let sensitive: Vec<f64> = xa
        .iter_rows()
        .flatten()
        .copied()
        .chain([0.5, -0.5])
        .collect();
    l.audit(&out, labels.len(), na, &sensitive);

    let pass = labels.len() == 2000
        && na == 6
        && nb == 4
        && out.iterations() == 100
        && fed.len() == central.trajectory.len()
        && worst < 1e-4
        && elapsed < Duration::from_secs(300);
    l.report(
        "federated = centralized",
        pass,
        format!(
            "{} rows, {na}+{nb} features, {} iterations, max per-iteration diff {worst:.2e} (limit 1e-4), {:.0}s (limit 300s)",
            labels.len(),
            out.iterations(),
            elapsed.as_secs_f64()
        ),
    );
}

fn optimality(l: &mut Ledger) {
    let mut worst = (0.0f64, 0.0f64);
    let mut runs = 0;
    let mut all_converged = true;
    let mut check = |l: &mut Ledger,
                     w: &Weights,
                     data: &LabeledBatch,
                     loss: LossKind,
                     tol_w: f64,
                     traj: &[Weights]| {
        l.track(traj);
        let k = kkt_residual(w, data, &BoxBounds::nonnegative(w.dim()), loss).unwrap();
        worst.0 = worst.0.max(k.residual / (10.0 * tol_w));
        worst.1 = worst.1.max(k.max_sign_violation());
        runs += 1;
    };
    for seed in 0..10 {
        let data = common::logistic_data(300, &[1.0, 0.6, -0.8, 0.0, 0.3], 0.1, 400 + seed);
        for loss in [LossKind::Exact, LossKind::Taylor] {
            let config = TrainConfig {
                eta: 0.1,
                batch_size: 300,
                tol_loss: 0.0,
                max_iter: 200_000,
                loss,
                seed,
                ..TrainConfig::default()
            };
            let out = train_centralized(&data, &config, &BoxBounds::nonnegative(5), None).unwrap();
            all_converged &= out.stop == StopReason::WeightsStalled;
            check(l, &out.weights, &data, loss, config.tol_w, &out.trajectory);
        }
    }

    // A converged federated run, full batch.
    let data = common::logistic_data(96, &[1.0, -0.5, 0.8], 0.0, 450);
    let xa = data.x.select_columns(&[0, 1]);
    let xb = data.x.select_columns(&[2]);
    let labels: Vec<u8> = data.y.iter().map(|&y| u8::from(y > 0.0)).collect();
    let train = TrainConfig {
        eta: 2.0,
        batch_size: 96,
        tol_loss: 0.0,
        tol_w: 1e-6,
        max_iter: 5000,
        seed: 451,
        ..TrainConfig::default()
    };
    let pc = ProtocolConfig::new(train.clone())
        .with_key_bits(512)
        .with_crypto_seed(452);
    let out = run_threaded(setup(&pc, xa.clone(), xb, &labels).unwrap(), pc.timeout).unwrap();
    all_converged &= out.stop() == StopReason::WeightsStalled;
    let sensitive: Vec<f64> = xa.iter_rows().flatten().copied().collect();
    l.audit(&out, 96, 2, &sensitive);
    check(
        l,
        &out.combined_weights(),
        &data,
        LossKind::Taylor,
        train.tol_w,
        &out.combined_trajectory(),
    );

    l.report(
        "optimality at convergence",
        all_converged && worst.0 < 1.0 && worst.1 <= 1e-3,
        format!(
            "{runs} converged runs (one federated), max residual {:.3} x 10*tol_w (limit 1), max sign violation {:.2e} (limit 1e-3)",
            worst.0, worst.1
        ),
    );
}

fn constraints(l: &mut Ledger) {
    let data = common::boundary_data(400, 500);
    let f = |w: &Weights| exact_loss(w, &data).unwrap();
    let free = train_centralized(
        &data,
        &TrainConfig {
            eta: 1.0,
            batch_size: 400,
            tol_w: 1e-10,
            tol_loss: 0.0,
            max_iter: 50_000,
            loss: LossKind::Exact,
            ..TrainConfig::default()
        },
        &BoxBounds::unbounded(2),
        Some(Weights::zeros(2)),
    )
    .unwrap();
    let config = TrainConfig {
        eta: 1.0,
        batch_size: 400,
        tol_w: 1e-9,
        tol_loss: 0.0,
        max_iter: 50_000,
        loss: LossKind::Exact,
        ..TrainConfig::default()
    };
    let fit = train_centralized(&data, &config, &BoxBounds::nonnegative(2), None).unwrap();
    l.track(&fit.trajectory);
    let grid = common::grid_search_2d(f, (0.0, 3.0), (-2.0, 2.0), 60);
    let oracle = common::polish(grid.clone(), f, 0.1);
    let gap = fit.weights.max_abs_diff(&oracle);
    let pass = free.weights.w[1] < 0.0
        && fit.weights.w[1] == 0.0
        && grid.w[1] == 0.0
        && gap < 1e-3
        && l.min_coefficient >= 0.0;
    l.report(
        "constraint enforcement",
        pass,
        format!(
            "unconstrained w2 = {:.3}, constrained w2 = {}, grid-search distance {gap:.1e}, min coefficient over all tracked iterates {}",
            free.weights.w[1], fit.weights.w[1], l.min_coefficient
        ),
    );
}

fn gradients(l: &mut Ledger) {
    let mut worst = (0.0f64, 0.0f64);
    let mut r = common::rng(600);
    for _ in 0..100 {
        let dim = r.gen_range(1..6);
        let rows = r.gen_range(2..40);
        let x: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<u8> = (0..rows).map(|_| r.gen_range(0..2)).collect();
        let batch = LabeledBatch::from_binary(Matrix::from_rows(&x), &labels).unwrap();
        let w = Weights::new(
            (0..dim)
                .map(|_| r.gen_range(-1.0..1.0) / dim as f64)
                .collect(),
            r.gen_range(-1.0..1.0),
        );
        let g = exact_gradient(&w, &batch).unwrap();
        let fd = common::finite_difference(&w, 1e-6, |w| exact_loss(w, &batch).unwrap());
        worst.0 = worst
            .0
            .max(common::relative_error((&g.w, g.b), (&fd.0, fd.1)));
        let g = taylor_gradient(&w, &batch).unwrap();
        let fd = common::finite_difference(&w, 1e-6, |w| taylor_loss_at(w, &batch).unwrap());
        worst.1 = worst
            .1
            .max(common::relative_error((&g.w, g.b), (&fd.0, fd.1)));
    }
    l.report(
        "gradient checks",
        worst.0 < 1e-5 && worst.1 < 1e-5,
        format!(
            "max relative error exact {:.1e}, taylor {:.1e} over 100 instances (limit 1e-5)",
            worst.0, worst.1
        ),
    );
}

fn metric_oracles(l: &mut Ledger) {
    let mut r = common::rng(700);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = r.gen_range(2..=50);
        let levels = r.gen_range(2..25);
        let s: Vec<f64> = (0..n)
            .map(|_| r.gen_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut y: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        y[0] = 1;
        y[1] = 0;
        let samples = scored(&s, &y).unwrap();
        worst.0 = worst
            .0
            .max((roc_auc(&samples).unwrap().auc - common::brute_auc(&s, &y)).abs());
        worst.1 = worst
            .1
            .max((ks(&samples).unwrap().statistic - common::brute_ks(&s, &y)).abs());
    }
    l.report(
        "metric oracles",
        worst.0 <= 1e-12 && worst.1 <= 1e-12,
        format!(
            "max |AUC - brute| {:.1e}, max |KS - brute| {:.1e} over 200 instances (limit 1e-12)",
            worst.0, worst.1
        ),
    );
}

fn enrichment(l: &mut Ledger) {
    let mut lifts = Vec::new();
    for seed in 1..=5u64 {
        let tmp = TempDir::new().unwrap();
        cmd_gen_synth(
            &SynthSpec {
                n_samples: 20_000,
                seed,
                ..SynthSpec::default()
            },
            tmp.path(),
        )
        .unwrap();
        let base = RunConfig::load(&tmp.path().join(RUN_TOML)).unwrap();
        let mut auc = |mode: Mode| {
            let mut c = base.clone();
            c.apply(&Overrides {
                mode: Some(mode),
                seed: Some(seed),
                out: Some(tmp.path().join(mode.to_string())),
                key_bits: Some(512),
                max_iter: Some(150),
                eta: Some(0.5),
            })
            .unwrap();
            c.train.batch_size = 128;
            let report = cmd_train(&c).unwrap().report;
            if let Some(p) = &report.protocol {
                l.privacy.0 += 1;
                l.privacy.1 += p.privacy_violations + usize::from(!p.flow_conforms);
            }
            l.min_coefficient = report
                .coefficients
                .iter()
                .map(|c| c.coefficient)
                .fold(l.min_coefficient, f64::min);
            report.test.auc
        };
        let fed = auc(Mode::Federated);
        let host = auc(Mode::HostOnly);
        lifts.push(fed - host);
    }
    let mean = lifts.iter().sum::<f64>() / lifts.len() as f64;
    l.report(
        "enrichment effect",
        mean >= 0.05,
        format!(
            "mean federated - host-only test AUC {mean:.4} over 5 seeds at n=20000 (limit 0.05); per seed {:?}",
            lifts.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
        ),
    );
}

fn main() -> ExitCode {
    let mut l = Ledger {
        failures: 0,
        min_coefficient: f64::INFINITY,
        privacy: (0, 0),
    };
    homomorphic(&mut l);
    encrypted_loss(&mut l);
    federated_equivalence(&mut l);
    optimality(&mut l);
    constraints(&mut l);
    gradients(&mut l);
    metric_oracles(&mut l);
    enrichment(&mut l);
    let (runs, violations) = l.privacy;
    l.report(
        "privacy trace",
        runs > 0 && violations == 0,
        format!("{runs} federated transcripts audited, {violations} violations"),
    );
    if l.failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} acceptance criteria failed", l.failures);
        ExitCode::FAILURE
    }
}
