//! Acceptance criteria. Runs without the libtest harness so each criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion
//! does.
//!
//! `SEMFIT_SKIP_TIMING=1` skips the wall-clock half of criterion 3 (the
//! flop assertions still run); the line then says so.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use semfit::analysis::{decode_agreement, nn_decode, optimal_direction_check, svd_projection_study, weighted_average_target, DecodeMetric, DirectOptions};
use semfit::bench::{bench_layer, time_output_layer, SweepConfig};
use semfit::corpus::{ConditionalProbMatrix, ContextSpec, Corpus, Direction};
use semfit::embedding::{neighbor_counts, positive_pmi, train_svd_embedding, Composition};
use semfit::encoder::{ContextEmbedder, EncoderDims, EncoderParams, LrSchedule};
use semfit::output::bessel::{bessel_ratio, log_bessel_i_asymptotic, log_bessel_i_series, log_cm, switchover};
use semfit::output::{
    full_distribution, full_softmax_loss, sampled_softmax_loss, semfit_cosine, semfit_l2, semfit_nllvmf, AdaptiveSoftmax, AdaptiveSoftmaxConfig,
    Distance, FullSoftmax, LayerKind, NegativeSample, OutputLayer, ParamGrads, SemFit, TargetTable,
};
use semfit::train::{train, Dataset, Head, HeadConfig, TrainOptions};

const CORPUS: &str = include_str!("data/synthetic_corpus.txt");

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `||a - n|| / max(||a||, ||n||)` against central differences of `f`.
fn fd_rel_err(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    let mut num = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        num[i] = (up - down) / (2.0 * h);
    }
    let diff = num.iter().zip(analytic).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(analytic.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 100;

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };
    let (v, m) = (23, 7);
    for inst in 0..INSTANCES {
        let c = gauss(&mut rng, m);
        let t = rng.random_range(0..v);

        let w: Vec<f64> = gauss(&mut rng, v * m).into_iter().map(|x| 0.5 * x).collect();
        let mut dc = vec![0.0; m];
        let mut dw = vec![0.0; v * m];
        full_softmax_loss(&c, t, &w, &mut dc, Some(&mut dw)).unwrap();
        record("softmax dc", fd_rel_err(&|x| full_softmax_loss(x, t, &w, &mut vec![0.0; m], None).unwrap(), &c, &dc));
        record("softmax dW", fd_rel_err(&|x| full_softmax_loss(&c, t, x, &mut vec![0.0; m], None).unwrap(), &w, &dw));

        let mut ids: Vec<usize> = (0..v).filter(|&i| i != t).collect();
        ids.truncate(1 + inst % (v - 2));
        let neg = NegativeSample {
            log_expected: ids.iter().map(|_| rng.random_range(-3.0..0.0)).collect(),
            ids,
        };
        dw.iter_mut().for_each(|x| *x = 0.0);
        sampled_softmax_loss(&c, t, &w, &neg, &mut dc, Some(&mut dw)).unwrap();
        record("sampled dc", fd_rel_err(&|x| sampled_softmax_loss(x, t, &w, &neg, &mut vec![0.0; m], None).unwrap(), &c, &dc));
        record("sampled dW", fd_rel_err(&|x| sampled_softmax_loss(&c, t, x, &neg, &mut vec![0.0; m], None).unwrap(), &w, &dw));

        let cfg = AdaptiveSoftmaxConfig {
            cutoffs: vec![5, 12, v],
            divisors: vec![1, 2, 3],
        };
        let mut ada = AdaptiveSoftmax::<f64>::random(cfg, m, 0.5, inst as u64).unwrap();
        let mut g = ada.new_grads();
        ada.loss_and_grad(&c, t, &mut dc, &mut g).unwrap();
        record("adaptive dc", fd_rel_err(&|x| ada.loss_and_grad(x, t, &mut vec![0.0; m], &mut ParamGrads::default()).unwrap(), &c, &dc));
        let names: Vec<String> = ada.params().into_iter().map(|(n, _)| n).collect();
        for (i, _) in names.iter().enumerate() {
            let p0 = ada.params()[i].1.to_vec();
            let mut num = vec![0.0; p0.len()];
            for j in 0..p0.len() {
                let h = 1e-6;
                ada.params_mut()[i][j] = p0[j] + h;
                let up = ada.loss_and_grad(&c, t, &mut vec![0.0; m], &mut ParamGrads::default()).unwrap();
                ada.params_mut()[i][j] = p0[j] - h;
                let down = ada.loss_and_grad(&c, t, &mut vec![0.0; m], &mut ParamGrads::default()).unwrap();
                ada.params_mut()[i][j] = p0[j];
                num[j] = (up - down) / (2.0 * h);
            }
            let diff = num.iter().zip(&g.tensors[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            record("adaptive params", diff / scale);
        }

        let target = unit(gauss(&mut rng, m));
        semfit_l2(&c, &target, &mut dc).unwrap();
        record("semfit l2 dc", fd_rel_err(&|x| semfit_l2(x, &target, &mut vec![0.0; m]).unwrap(), &c, &dc));
        semfit_cosine(&c, &target, &mut dc).unwrap();
        record("semfit cosine dc", fd_rel_err(&|x| semfit_cosine(x, &target, &mut vec![0.0; m]).unwrap(), &c, &dc));
        let (l1, l2) = (rng.random_range(0.0..0.5), rng.random_range(0.0..2.0));
        let c16: Vec<f64> = gauss(&mut rng, 16).into_iter().map(|x| 3.0 * x).collect();
        let t16 = unit(gauss(&mut rng, 16));
        let mut dc16 = vec![0.0; 16];
        semfit_nllvmf(&c16, &t16, l1, l2, &mut dc16).unwrap();
        record("semfit nllvmf dc", fd_rel_err(&|x| semfit_nllvmf(x, &t16, l1, l2, &mut [0.0; 16]).unwrap(), &c16, &dc16));

        // encoder: every parameter through a random linear read-out of c
        let dims = EncoderDims {
            k: 2,
            input_dim: 4,
            hidden: 6,
            output_dim: 5,
        };
        let mut params = EncoderParams::init(inst as u64, dims).unwrap();
        params.ln_gain.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        params.ln_bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        let x = gauss(&mut rng, 8);
        let r = gauss(&mut rng, 5);
        let (_, tape) = params.forward(&x).unwrap();
        let grads = params.backward(&tape, &r).unwrap();
        let readout = |p: &EncoderParams| -> f64 { p.forward(&x).unwrap().0.iter().zip(&r).map(|(a, b)| a * b).sum() };
        for ti in 0..5 {
            let flat = params.tensors()[ti].to_vec();
            let f = |vals: &[f64]| {
                let mut q = params.clone();
                q.tensors_mut()[ti].copy_from_slice(vals);
                readout(&q)
            };
            record("encoder params", fd_rel_err(&f, &flat, grads.tensors()[ti]));
        }
    }
    let bad: Vec<String> = worst.iter().filter(|(_, e)| !(*e < GRAD_TOL)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    ensure!(bad.is_empty(), "relative error above {GRAD_TOL}: {}", bad.join(", "));
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(format!("{} checks x {INSTANCES} instances, worst relative error {max:.1e}", worst.len()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let mut text = String::new();
    for _ in 0..60 {
        let line: Vec<&str> = (0..25).map(|_| words[rng.random_range(0..words.len())].as_str()).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    let corpus = Corpus::from_text(&text);
    let spec = ContextSpec::new(Direction::Forward, 2).unwrap();
    let p = ConditionalProbMatrix::from_counts(&corpus.pair_counts(spec), corpus.vocab.len()).unwrap();
    ensure!(p.n_contexts() <= 200, "{} contexts", p.n_contexts());
    let v = corpus.vocab.len();
    let targets = Array2::from_shape_fn((v, 8), |_| StandardNormal.sample(&mut rng));
    let targets = Array2::from_shape_vec((v, 8), targets.rows().into_iter().flat_map(|r| unit(r.to_vec())).collect()).unwrap();
    let report = optimal_direction_check(&p, targets.view(), &DirectOptions::default()).unwrap();
    let elapsed = start.elapsed();
    ensure!(report.undefined == 0, "{} contexts with a vanishing average", report.undefined);
    ensure!(report.min > 0.999, "minimum similarity {}", report.min);
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{} contexts, min cosine {:.9}, {:.1?}", p.n_contexts(), report.min, elapsed))
}

fn skip_timing() -> bool {
    std::env::var("SEMFIT_SKIP_TIMING").is_ok_and(|v| v == "1")
}

fn criterion_3() -> Outcome {
    let (m, batch) = (300, 16);
    let cfg = SweepConfig {
        dim: m,
        batch,
        reps: 9,
        ..SweepConfig::default()
    };
    let mut semfit_flops = Vec::new();
    for v in [1_000, 10_000, 100_000, 1_000_000] {
        let layer = SemFit::new(Distance::Cosine, TargetTable::<f32>::random(v.min(10), m, true, 0).unwrap()).unwrap();
        // flop counts come from (batch, m) only; check the built V=10^6 table below too
        semfit_flops.push(layer.flop_count(batch));
    }
    let ada = |v: usize| AdaptiveSoftmax::<f32>::random(AdaptiveSoftmaxConfig::default_policy(v), m, 0.01, 0).unwrap().flop_count(batch);
    let ada_ratio = ada(1_000_000) as f64 / ada(10_000) as f64;
    let ada_limit = 100f64.powf(0.9);
    ensure!(ada_ratio < ada_limit, "adaptive flop ratio {ada_ratio:.1} >= {ada_limit:.1}");

    let start = Instant::now();
    let time = |kind: LayerKind, v: usize| -> Result<(u64, u64), String> {
        let layer = bench_layer(kind, v, m, &cfg).map_err(|e| e.to_string())?;
        let flops = layer.flop_count(batch);
        if skip_timing() {
            return Ok((0, flops));
        }
        let rec = time_output_layer(layer.as_ref(), batch, cfg.reps, 7).map_err(|e| e.to_string())?;
        Ok((rec.median_ns.unwrap(), flops))
    };
    // SemFit timings are a few microseconds, so take the best of a few
    // interleaved runs to keep scheduler noise out of the ratio
    let small = bench_layer(LayerKind::Semfit, 10_000, m, &cfg).map_err(|e| e.to_string())?;
    let big = bench_layer(LayerKind::Semfit, 1_000_000, m, &cfg).map_err(|e| e.to_string())?;
    let (f_small, f_big) = (small.flop_count(batch), big.flop_count(batch));
    let (mut s_small, mut s_big) = (u64::MAX, u64::MAX);
    for round in 0..if skip_timing() { 0 } else { 3 } {
        for (layer, best) in [(&small, &mut s_small), (&big, &mut s_big)] {
            let rec = time_output_layer(layer.as_ref(), batch, cfg.reps, 7 + round).map_err(|e| e.to_string())?;
            *best = (*best).min(rec.median_ns.unwrap());
        }
    }
    drop((small, big));
    semfit_flops.extend([f_small, f_big]);
    ensure!(semfit_flops.windows(2).all(|w| w[0] == w[1]), "SemFit flops differ across V: {semfit_flops:?}");
    if skip_timing() {
        return Ok(format!(
            "flops only (timing skipped): SemFit {} for every V, adaptive ratio {ada_ratio:.1} < {ada_limit:.1}",
            semfit_flops[0]
        ));
    }
    let (x_small, _) = time(LayerKind::Softmax, 10_000)?;
    let (x_big, _) = time(LayerKind::Softmax, 1_000_000)?;
    let elapsed = start.elapsed();
    let semfit_spread = s_small.max(s_big) as f64 / s_small.min(s_big) as f64;
    let softmax_ratio = x_big as f64 / x_small as f64;
    ensure!(semfit_spread < 1.2, "SemFit times {s_small} ns vs {s_big} ns");
    ensure!(softmax_ratio >= 10.0, "softmax time ratio {softmax_ratio:.1}");
    ensure!(elapsed < Duration::from_secs(600), "timing took {elapsed:?}");
    Ok(format!(
        "SemFit {s_small} / {s_big} ns (x{semfit_spread:.2}), softmax x{softmax_ratio:.0}, adaptive flop ratio {ada_ratio:.1}, timing {elapsed:.0?}"
    ))
}

fn criterion_4() -> Outcome {
    let semfit = SemFit::new(Distance::Cosine, TargetTable::<f32>::random(40_000, 300, true, 0).unwrap()).unwrap();
    ensure!(semfit.trainable_param_count() == 0, "SemFit params {}", semfit.trainable_param_count());
    ensure!(semfit.grad_payload_bytes(16) == 0, "SemFit payload {}", semfit.grad_payload_bytes(16));
    let soft = FullSoftmax::<f32>::zeros(40_000, 300).unwrap();
    ensure!(soft.trainable_param_count() == 40_000 * 300, "softmax params {}", soft.trainable_param_count());
    let ada = AdaptiveSoftmax::<f32>::random(AdaptiveSoftmaxConfig::default_policy(40_000), 300, 0.01, 0).unwrap();
    // head 8000 words + 2 cluster rows at 300; tails 24000 words at 300/4 and
    // 8000 words at 300/16 = 18, each with its 300-row projection
    let hand = (8_000 + 2) * 300 + (300 * 75 + 24_000 * 75) + (300 * 18 + 8_000 * 18);
    ensure!(hand == 4_372_500, "hand arithmetic {hand}");
    ensure!(ada.trainable_param_count() == hand, "adaptive params {} vs {hand}", ada.trainable_param_count());
    Ok(format!("SemFit 0 / 0 B, softmax {}, adaptive {hand}", 40_000 * 300))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for inst in 0..50 {
        let (v, m) = (rng.random_range(2..40), rng.random_range(1..10));
        let full = FullSoftmax::<f64>::random(v, m, 1.0, inst).unwrap();
        let c = gauss(&mut rng, m);
        let t = rng.random_range(0..v);
        let mut dc = vec![0.0; m];
        let exact = full.loss_and_grad(&c, t, &mut dc, &mut ParamGrads::default()).unwrap();
        let neg = NegativeSample::exhaustive(v, &HashSet::from([t]));
        let sampled = sampled_softmax_loss(&c, t, full.weights(), &neg, &mut dc, None).unwrap();
        let mut ada = AdaptiveSoftmax::<f64>::random(AdaptiveSoftmaxConfig::single(v), m, 1.0, inst).unwrap();
        ada.head_mut().copy_from_slice(full.weights());
        let adaptive = ada.loss_and_grad(&c, t, &mut dc, &mut ParamGrads::default()).unwrap();
        worst = worst.max((sampled - exact).abs()).max((adaptive - exact).abs());
    }
    ensure!(worst <= 1e-9, "largest deviation {worst:e}");
    Ok(format!("50 instances, largest deviation {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for inst in 0..5 {
        let layer = AdaptiveSoftmax::<f64>::random(AdaptiveSoftmaxConfig::default_policy(1000), 32, 0.3, inst).unwrap();
        let c: Vec<f64> = gauss(&mut rng, 32).into_iter().map(|x| 2.0 * x).collect();
        let total: f64 = full_distribution(&layer, &c).unwrap().iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    ensure!(worst <= 1e-9, "sum deviates by {worst:e}");
    Ok(format!("V=1000, 5 contexts, |sum - 1| <= {worst:.1e}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = Array2::from_shape_fn((100, 500), |_| rng.random::<f64>().powi(4));
    let p = &p / &p.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    let report = svd_projection_study(p.view(), 10, &[], 20, 70, false).unwrap();
    let best_other = report.candidates.iter().map(|c| c.error).fold(f64::INFINITY, f64::min);
    ensure!(report.candidates.len() == 20, "{} competitors", report.candidates.len());
    ensure!(
        report.candidates.iter().all(|c| report.svd_error <= c.error),
        "SVD error {} vs best random {best_other}",
        report.svd_error
    );
    ensure!(
        (report.svd_error - report.truncation_error).abs() <= 1e-9 * report.truncation_error.max(1.0),
        "SVD error {} differs from truncation error {}",
        report.svd_error,
        report.truncation_error
    );
    Ok(format!("SVD error {:.6} < best of 20 random {:.6}", report.svd_error, best_other))
}

fn criterion_8() -> Outcome {
    // p = (0.4, 0.3, 0.3): a points along +x, b and c almost along -x
    let eps: f64 = 0.1;
    let n = (1.0 + eps * eps).sqrt();
    let w = ndarray::array![[1.0, 0.0], [-1.0 / n, eps / n], [-1.0 / n, -eps / n]];
    let p = Array1::from(vec![0.4, 0.3, 0.3]);
    let avg = weighted_average_target(p.view(), w.view()).unwrap();
    ensure!(avg[0] < 0.0, "weighted average {avg:?} does not point toward -x");
    let decoded = nn_decode(&avg, w.view(), DecodeMetric::Cosine).unwrap();
    ensure!(decoded != 0, "nearest neighbour decoded the argmax word");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (v, m, trials) = (20, 64, 1000);
    let mut agree = 0;
    for _ in 0..trials {
        let w = near_orthogonal(&mut rng, v, m, 0.1);
        let top = rng.random_range(0..v);
        let pmax = rng.random_range(0.9..1.0);
        let rest: Vec<f64> = (0..v).map(|_| rng.random::<f64>()).collect();
        let rest_sum: f64 = rest.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, x)| x).sum();
        let row: Vec<f64> = (0..v).map(|i| if i == top { pmax } else { (1.0 - pmax) * rest[i] / rest_sum }).collect();
        let pm = Array2::from_shape_vec((1, v), row).unwrap();
        let r = decode_agreement(pm.view(), w.view(), DecodeMetric::Cosine).unwrap();
        agree += usize::from(r.rows[0].agree);
    }
    ensure!(agree == trials, "{agree}/{trials} sharp instances agree");
    Ok(format!("counterexample decodes {decoded} instead of 0; sharp family {agree}/{trials} agree"))
}

/// Unit rows with pairwise `|w . w'| <= bound`: an orthonormal set nudged
/// by small noise, resampled until the bound holds.
fn near_orthogonal(rng: &mut ChaCha8Rng, v: usize, m: usize, bound: f64) -> Array2<f64> {
    loop {
        let g = Array2::from_shape_fn((m, v), |_| StandardNormal.sample(rng));
        let q = semfit::linalg::orthonormalize(g);
        let mut rows = Vec::with_capacity(v * m);
        for j in 0..v {
            let noisy: Vec<f64> = (0..m).map(|i| q[[i, j]] + 0.02 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
            rows.extend(unit(noisy));
        }
        let w = Array2::from_shape_vec((v, m), rows).unwrap();
        let gram = w.dot(&w.t());
        if (0..v).all(|i| (0..v).all(|j| i == j || gram[[i, j]].abs() <= bound)) {
            return w;
        }
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let corpus = Corpus::from_text(CORPUS);
    let hapax = corpus.vocab.counts().iter().filter(|&&c| c == 1).count();
    let ppmi = positive_pmi(neighbor_counts(&corpus, 500).view());
    let emb = train_svd_embedding(ppmi.view(), corpus.vocab.words().to_vec(), 32, 0.5, 7).map_err(|e| e.to_string())?;
    let spec = ContextSpec::new(Direction::Forward, 2).unwrap();
    let data = Dataset::from_corpus(&corpus, spec);
    let embedder = ContextEmbedder::new(&emb.table, &corpus.vocab, Direction::Forward).map_err(|e| e.to_string())?;
    let dims = EncoderDims {
        k: 2,
        input_dim: 32,
        hidden: 64,
        output_dim: 32,
    };
    let mut params = EncoderParams::init(1, dims).unwrap();
    let cfg = HeadConfig::Semfit {
        distance: Distance::Cosine,
        composition: Composition::WordAndSubword,
    };
    let mut head = Head::build(&cfg, &corpus.vocab, 32, Some(&emb.table), 2).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        steps: 3000,
        batch: 32,
        schedule: LrSchedule { base: 0.5, warmup: 100 },
        seed: 3,
        eval_examples: 5000,
    };
    let r = train(&mut params, &mut head, &embedder, &data, &opts, |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let before = r.initial.mean_cosine_distance.unwrap();
    let after = r.last.mean_cosine_distance.unwrap();
    let reduction = 1.0 - after / before;
    ensure!(reduction >= 0.3, "mean cosine distance {before:.4} -> {after:.4}");
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "{} tokens, V={} ({hapax} hapax), cosine distance {before:.3} -> {after:.3} (-{:.0}%), {elapsed:.1?}",
        corpus.token_count(),
        corpus.vocab.len(),
        100.0 * reduction
    ))
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    for m in [4usize, 64, 300] {
        let nu = m as f64 / 2.0 - 1.0;
        let x = switchover(nu);
        let a = log_bessel_i_series(nu, x).unwrap();
        let b = log_bessel_i_asymptotic(nu, x).unwrap();
        // log C_m differs between branches only through log I
        worst = worst.max((a - b).abs());
        ensure!((a - b).abs() < 1e-8, "m={m}: series {a} vs asymptotic {b}");
        ensure!(log_cm(x, m).is_ok(), "log_cm({x}, {m}) failed");
    }
    let mut points = 0;
    for i in 0..10 {
        let nu = [0.0, 0.5, 1.0, 2.5, 7.0, 15.0, 31.0, 74.0, 149.0, 400.0][i];
        for j in 0..100 {
            let k = 10f64.powf(-3.0 + 7.0 * j as f64 / 99.0);
            let r = bessel_ratio(nu, k).map_err(|e| e.to_string())?;
            ensure!(r > 0.0 && r < 1.0, "ratio({nu}, {k}) = {r}");
            points += 1;
        }
    }
    Ok(format!("branch gap <= {worst:.1e} for m in {{4, 64, 300}}; {points} ratios in (0, 1)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", criterion_1),
        ("direction theorem", criterion_2),
        ("vocabulary scaling", criterion_3),
        ("parameter accounting", criterion_4),
        ("degenerate equivalences", criterion_5),
        ("adaptive normalization", criterion_6),
        ("Eckart-Young projection", criterion_7),
        ("decode flaw", criterion_8),
        ("end-to-end smoke", criterion_9),
        ("NLLvMF numerics", criterion_10),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    let stdout = std::io::stdout();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let mut out = stdout.lock();
        let _ = writeln!(out, "criterion {:>2} {tag} {name}: {detail} [{:.1?}]", i + 1, start.elapsed());
        let _ = out.flush();
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
