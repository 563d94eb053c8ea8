//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use pgcn::chebconv::{cheb_conv_value, ChebFilter};
use pgcn::datasets::{synth_generate, LabelScheme, SynthConfig};
use pgcn::eval::{run_protocol, split_loso, split_subject_dependent};
use pgcn::features::{band_energy, band_filter, de_feature, Band, RecordingIds, Segment};
use pgcn::graphgen::{compute_dynamic_graph, GraphGenParams};
use pgcn::model::{gradient_check, Ablation, Pgcn, PgcnConfig};
use pgcn::numkit::{Tape, Tensor};
use pgcn::rng::{self, SeededRng};
use pgcn::trainer::{params_hash, TrainConfig, Trainer};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: pgcn::Error) -> String {
    e.to_string()
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let model = Pgcn::new(PgcnConfig::toy()).map_err(err)?;
    let x = rng::normal_tensor(&mut rng::seeded(11), &[8, 3], 1.0);
    let report = gradient_check(&model, &x, 1, 4, 1e-5, false).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    check(
        report.max_rel_error() < 1e-4 && secs < 60.0,
        format!(
            "max relative error {:.2e} over {} coordinates in {secs:.1}s",
            report.max_rel_error(),
            report.coordinates()
        ),
    )
}

fn head_isolation() -> Outcome {
    let model = Pgcn::new(PgcnConfig::toy()).map_err(err)?;
    let mut rng = rng::seeded(12);
    let mut checked = 0usize;
    for _ in 0..100 {
        let x = rng::normal_tensor(&mut rng, &[8, 3], 1.0);
        let (coarse, fine) = (rng.random_range(0..3), rng.random_range(0..5));
        let mut tape = Tape::new();
        let fwd = model.forward_on_tape(&mut tape, &x).map_err(err)?;
        let (l_c, l) = model.losses_on_tape(&mut tape, &fwd, coarse, fine).map_err(err)?;
        let g = tape.backward(l).map_err(err)?;
        for &v in &fwd.coarse_params {
            if g.wrt(v).data().iter().any(|&z| z != 0.0) {
                return Err("fine loss reached a coarse parameter".into());
            }
            checked += g.wrt(v).numel();
        }
        let g = tape.backward(l_c.expect("full model")).map_err(err)?;
        for &v in &fwd.fine_params {
            if g.wrt(v).data().iter().any(|&z| z != 0.0) {
                return Err("coarse loss reached a fine parameter".into());
            }
            checked += g.wrt(v).numel();
        }
    }
    Ok(format!("100 inputs, {checked} cross-head partials all exactly zero"))
}

fn staggered_schedule() -> Outcome {
    let ds = synth_generate(&SynthConfig {
        subjects: 2,
        trials: 7,
        segments: 4,
        channels: 8,
        bands: 3,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    let model = PgcnConfig {
        fine_classes: 7,
        ..PgcnConfig::toy()
    };
    let cfg = TrainConfig {
        steps: 4,
        batch: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut t = Trainer::for_dataset(&ds, model, cfg).map_err(err)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rng::seeded(13);
    for it in 0..40u64 {
        order.shuffle(&mut rng);
        let before = params_hash(&t.model.params.coarse_tensors());
        t.iteration(&ds, &order[..8]).map_err(err)?;
        let changed = params_hash(&t.model.params.coarse_tensors()) != before;
        if changed != (it % 4 == 0) {
            return Err(format!("coarse hash changed={changed} at iteration {it}"));
        }
    }
    Ok(format!(
        "40 iterations: {} fine updates, {} coarse updates at i = 0 mod 4",
        t.fine_updates, t.coarse_updates
    ))
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    Tensor::from_fn(x.rows(), x.cols(), |i, j| x.get(perm[i], j))
}

fn permutation_equivariance() -> Outcome {
    let mut rng = rng::seeded(14);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..12);
        let d = rng.random_range(1..5);
        let k_out = rng.random_range(1..5);
        let order = rng.random_range(1..5);
        let g = rng::uniform_tensor(&mut rng, &[n, n], 0.5).map(f64::abs);
        let x = rng::normal_tensor(&mut rng, &[n, d], 1.0);
        let filter = ChebFilter::new(
            (0..order).map(|_| rng::normal_tensor(&mut rng, &[d, k_out], 1.0)).collect(),
        )
        .map_err(err)?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // (ΠGΠᵀ)[i,j] = G[π(i), π(j)], (ΠX)[i] = X[π(i)]
        let g_perm = Tensor::from_fn(n, n, |i, j| g.get(perm[i], perm[j]));
        let direct = cheb_conv_value(&g, &x, &filter).map_err(err)?;
        let permuted = cheb_conv_value(&g_perm, &permute_rows(&x, &perm), &filter).map_err(err)?;
        let expect = permute_rows(&direct, &perm);
        for (a, b) in permuted.data().iter().zip(expect.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-10, format!("50 trials, max deviation {worst:.2e}"))
}

fn random_generator(rng: &mut SeededRng, n: usize, d: usize) -> GraphGenParams {
    let scale = rng.random_range(0.1..3.0);
    GraphGenParams {
        p: rng::normal_tensor(rng, &[n, n], scale),
        b: rng::normal_tensor(rng, &[n, d], scale),
        q: rng::normal_tensor(rng, &[d, n * d], scale),
    }
}

fn dynamic_graph_nonnegativity() -> Outcome {
    let mut rng = rng::seeded(15);
    let mut min = f64::INFINITY;
    let mut clamped = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(2..10);
        let d = rng.random_range(1..6);
        let params = random_generator(&mut rng, n, d);
        let scale = rng.random_range(0.1..5.0);
        let x = rng::normal_tensor(&mut rng, &[n, d], scale);
        let g = compute_dynamic_graph(&x, &params).map_err(err)?;
        min = min.min(g.min_entry());
        clamped += g.tensor().data().iter().filter(|&&v| v == 0.0).count();
    }
    check(
        min >= 0.0,
        format!("1000 random graphs, min entry {min}, {clamped} clamped entries"),
    )
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let ds = synth_generate(&SynthConfig {
        subjects: 10,
        trials: 8,
        segments: 30,
        channels: 16,
        bands: 5,
        scheme: LabelScheme::MpedLike,
        separation: 1.0,
        subject_effect: 0.5,
        noise: 1.0,
        seed: 0,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    let model = PgcnConfig {
        channels: 16,
        order: 3,
        coarse_dynamic_dim: 4,
        coarse_static_dim: 4,
        fine_dynamic_dim: 4,
        fine_static_dim: 4,
        ..PgcnConfig::default()
    };
    let train = TrainConfig {
        epochs: 20,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let plan = split_subject_dependent(&ds, 7).map_err(err)?;
    let run = run_protocol(&ds, &plan, &model, &train, 1).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let acc = run.report.mean_accuracy;
    check(
        acc >= 0.90 && secs < 300.0,
        format!(
            "subject-dependent accuracy {:.1}% (chance 14.3%) after {} epochs in {secs:.0}s",
            100.0 * acc,
            train.epochs
        ),
    )
}

fn hierarchy_benefit() -> Outcome {
    let ds = synth_generate(&SynthConfig {
        subjects: 10,
        trials: 8,
        segments: 30,
        channels: 16,
        bands: 5,
        scheme: LabelScheme::MpedLike,
        separation: 1.0,
        subject_effect: 2.0,
        noise: 1.0,
        seed: 0,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    let plan = split_subject_dependent(&ds, 7).map_err(err)?;
    let mut means = Vec::new();
    for ablation in [Ablation::Full, Ablation::PgcnF] {
        let mut total = 0.0;
        for seed in 0..5 {
            let model = PgcnConfig {
                channels: 16,
                order: 3,
                coarse_dynamic_dim: 4,
                coarse_static_dim: 4,
                fine_dynamic_dim: 4,
                fine_static_dim: 4,
                ablation,
                seed,
                ..PgcnConfig::default()
            };
            let train = TrainConfig {
                epochs: 10,
                lr: 1e-3,
                seed,
                ..TrainConfig::default()
            };
            total += run_protocol(&ds, &plan, &model, &train, 1)
                .map_err(err)?
                .report
                .mean_accuracy;
        }
        means.push(total / 5.0);
    }
    check(
        means[0] >= means[1],
        format!(
            "mean accuracy over 5 seeds: full {:.1}%, pgcn-f {:.1}%",
            100.0 * means[0],
            100.0 * means[1]
        ),
    )
}

fn feature_oracle() -> Outcome {
    let fs = 200.0;
    let mut rng = rng::seeded(16);
    let noise = Segment {
        channels: (0..4)
            .map(|_| (0..(10.0 * fs) as usize).map(|_| rng::normal(&mut rng)).collect())
            .collect(),
        fs,
        ids: RecordingIds::default(),
    };
    let target = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let de = de_feature(&noise).map_err(err)?;
    let de_err = de.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);

    let sine = Segment {
        channels: vec![(0..fs as usize)
            .map(|t| (2.0 * std::f64::consts::PI * 10.0 * t as f64 / fs).sin())
            .collect()],
        fs,
        ids: RecordingIds::default(),
    };
    let filtered = band_filter(&sine, Band::new(8.0, 14.0)).map_err(err)?;
    let energy = band_energy(&filtered)[0];
    check(
        de_err <= 0.05 && (energy - 0.5).abs() <= 1e-3,
        format!("white-noise DE within {de_err:.4} of {target:.5}; in-band sine energy {energy:.6}"),
    )
}

fn protocol_correctness() -> Outcome {
    let mut lines = Vec::new();
    for (scheme, trials, train_trials) in [(LabelScheme::Seed4Like, 24, 16), (LabelScheme::MpedLike, 28, 21)] {
        let ds = synth_generate(&SynthConfig {
            subjects: 3,
            sessions: 2,
            trials,
            segments: 2,
            channels: 4,
            bands: 5,
            scheme,
            ..SynthConfig::default()
        })
        .map_err(err)?;
        let plan = split_subject_dependent(&ds, train_trials).map_err(err)?;
        for f in &plan.folds {
            for session in 0..2 {
                let count = |idx: &[usize]| {
                    let mut t: Vec<u32> = idx
                        .iter()
                        .map(|&i| &ds.samples()[i])
                        .filter(|s| s.session == session)
                        .map(|s| s.trial)
                        .collect();
                    t.dedup();
                    t
                };
                let (train, test) = (count(&f.train), count(&f.test));
                let expect_train: Vec<u32> = (0..train_trials as u32).collect();
                if train != expect_train || test.len() != trials as usize - train_trials {
                    return Err(format!("fold {} session {session}: {train:?} / {test:?}", f.id));
                }
            }
        }
        lines.push(format!("{train_trials}/{}", trials as usize - train_trials));

        let loso = split_loso(&ds).map_err(err)?;
        let mut seen = vec![0u32; ds.len()];
        for f in &loso.folds {
            let held = f.subject.expect("loso fold subject");
            if f.train.iter().any(|&i| ds.samples()[i].subject == held)
                || f.test.iter().any(|&i| ds.samples()[i].subject != held)
            {
                return Err(format!("fold {} leaks subject {held}", f.id));
            }
            for &i in &f.test {
                seen[i] += 1;
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return Err("LOSO test sets do not partition the dataset".into());
        }
    }
    Ok(format!("trial splits {} exact; LOSO folds partition without leakage", lines.join(" and ")))
}

fn softmax_loss_identities() -> Outcome {
    let mut rng = rng::seeded(17);
    let mut worst_sum = 0.0f64;
    let mut worst_loss = 0.0f64;
    for p in [5usize, 7] {
        let cfg = PgcnConfig {
            fine_classes: p,
            ..PgcnConfig::toy()
        };
        let mut model = Pgcn::new(cfg).map_err(err)?;
        for _ in 0..50 {
            let x = rng::normal_tensor(&mut rng, &[8, 3], 3.0);
            let out = model.forward(&x).map_err(err)?;
            worst_sum = worst_sum.max((out.y.sum() - 1.0).abs());
            worst_sum = worst_sum.max((out.y_c.expect("coarse head").sum() - 1.0).abs());
        }
        model.params.fine.fc_w = Tensor::zeros(model.params.fine.fc_w.shape());
        let x = rng::normal_tensor(&mut rng, &[8, 3], 1.0);
        let (_, loss) = pgcn::model::batch_losses(&model, &[(&x, 0, p - 1)]).map_err(err)?;
        worst_loss = worst_loss.max((loss - (p as f64).ln()).abs());
    }
    check(
        worst_sum <= 1e-9 && worst_loss <= 1e-9,
        format!("row-sum deviation {worst_sum:.1e}; uniform loss deviation from ln P {worst_loss:.1e}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient integrity", gradient_integrity),
        ("head isolation", head_isolation),
        ("staggered schedule", staggered_schedule),
        ("permutation equivariance", permutation_equivariance),
        ("dynamic-graph nonnegativity", dynamic_graph_nonnegativity),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("hierarchy benefit direction", hierarchy_benefit),
        ("feature oracle", feature_oracle),
        ("protocol correctness", protocol_correctness),
        ("softmax/loss identities", softmax_loss_identities),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("acceptance {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
