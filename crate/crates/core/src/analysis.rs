//! Checks on what the output objectives converge to, the SVD view of the
//! conditional probability matrix, and nearest-neighbour decoding.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::ConditionalProbMatrix;
use crate::encoder::{ContextEmbedder, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::{self, least_squares_residual};
use crate::output::{semfit_cosine, OutputLayer};

/// Largest number of distinct contexts the enumeration-based checks accept.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 20_000;

/// Sharpness bin edges for decode agreement.
pub const SHARPNESS_BINS: [f64; 5] = [0.0, 0.5, 0.7, 0.9, 1.0];

/// Pseudo-inverse cut-off for the projection study.
pub const PINV_TOL: f64 = 1e-10;

const MIN_STEP: f64 = 1e-20;

/// `sum_w p(w|c) w`, accumulated in word-id order.
pub fn weighted_average_target(row: ArrayView1<f64>, w: ArrayView2<f64>) -> Result<Vec<f64>> {
    if row.len() != w.nrows() {
        return Err(Error::Shape(format!("distribution over {} words, table of {}", row.len(), w.nrows())));
    }
    let mut out = vec![0.0; w.ncols()];
    for (p, wv) in row.iter().zip(w.rows()) {
        for (o, &x) in out.iter_mut().zip(wv.iter()) {
            *o += p * x;
        }
    }
    Ok(out)
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ua, ub) = (unit(a)?, unit(b)?);
    Some(ua.iter().zip(&ub).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextDirection {
    pub row: usize,
    pub count: u64,
    /// `cos(c, sum_w p(w|c) w)`; `None` when the weighted average vanishes.
    pub similarity: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalObjectiveReport {
    pub mode: String,
    pub contexts: Vec<ContextDirection>,
    /// Mean similarity weighted by context frequency.
    pub weighted_mean: f64,
    pub min: f64,
    pub undefined: usize,
}

impl GlobalObjectiveReport {
    fn assemble(mode: &str, contexts: Vec<ContextDirection>) -> Self {
        let defined: Vec<&ContextDirection> = contexts.iter().filter(|c| c.similarity.is_some()).collect();
        let total: f64 = defined.iter().map(|c| c.count as f64).sum();
        let weighted_mean = if total > 0.0 {
            defined.iter().map(|c| c.count as f64 * c.similarity.unwrap()).sum::<f64>() / total
        } else {
            f64::NAN
        };
        let min = defined.iter().map(|c| c.similarity.unwrap()).fold(f64::INFINITY, f64::min);
        GlobalObjectiveReport {
            mode: mode.to_owned(),
            undefined: contexts.len() - defined.len(),
            contexts,
            weighted_mean,
            min,
        }
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "direction check ({})", self.mode);
        let _ = writeln!(s, "{:>8} {:>10} {:>12} {:>10}", "row", "count", "similarity", "iters");
        for c in &self.contexts {
            let sim = c.similarity.map_or("undefined".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{:>8} {:>10} {:>12} {:>10}", c.row, c.count, sim, c.iterations);
        }
        let _ = writeln!(s, "weighted mean {:.6}  min {:.6}  undefined {}", self.weighted_mean, self.min, self.undefined);
        s
    }
}

fn check_enumerable(p: &ConditionalProbMatrix, limit: usize) -> Result<()> {
    if p.n_contexts() > limit {
        return Err(Error::NotEnumerable {
            contexts: p.n_contexts(),
            limit,
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectOptions {
    pub max_iters: usize,
    /// Stop once the tangential gradient norm falls below this.
    pub tol: f64,
    pub seed: u64,
    pub limit: usize,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions {
            max_iters: 20_000,
            tol: 1e-12,
            seed: 0,
            limit: DEFAULT_ENUMERATION_LIMIT,
        }
    }
}

/// Minimizes `sum_w p(w|c) cosine_loss(c, w)` over a free vector `c` for
/// one distribution, by projected gradient descent on the unit sphere with
/// an adaptive step. `targets` rows must be unit vectors. Returns the final
/// `c` and the iteration count.
pub fn optimize_context(row: ArrayView1<f64>, targets: ArrayView2<f64>, init: Vec<f64>, opts: &DirectOptions) -> Result<(Vec<f64>, usize)> {
    let m = targets.ncols();
    let support: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
    let objective = |c: &[f64], grad: &mut [f64]| -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut dc = vec![0.0; m];
        let mut loss = 0.0;
        for &(w, p) in &support {
            let wv = targets.row(w);
            loss += p * semfit_cosine(c, wv.as_slice().expect("standard layout"), &mut dc)?;
            for (g, d) in grad.iter_mut().zip(&dc) {
                *g += p * d;
            }
        }
        Ok(loss)
    };
    let mut c = unit(&init).ok_or(Error::ZeroVector)?;
    let mut grad = vec![0.0; m];
    let mut loss = objective(&c, &mut grad)?;
    let mut step = 1.0;
    for it in 0..opts.max_iters {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < opts.tol {
            return Ok((c, it));
        }
        let mut trial_grad = vec![0.0; m];
        loop {
            let trial: Vec<f64> = c.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let trial = unit(&trial).ok_or(Error::ZeroVector)?;
            let trial_loss = objective(&trial, &mut trial_grad)?;
            // 1 - cos is quadratic in the angle, so near the optimum the loss
            // stops resolving progress; the gradient norm is linear in the
            // angle and breaks ties. With neither improving the step
            // collapses and the search ends.
            let trial_gnorm = trial_grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if trial_loss < loss || (trial_loss == loss && trial_gnorm < gnorm) {
                c = trial;
                loss = trial_loss;
                std::mem::swap(&mut grad, &mut trial_grad);
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                return Ok((c, it));
            }
        }
    }
    Ok((c, opts.max_iters))
}

/// Direct per-context optimization of the cosine objective, bypassing the
/// encoder, compared with the normalized weighted-average target.
pub fn optimal_direction_check(p: &ConditionalProbMatrix, targets: ArrayView2<f64>, opts: &DirectOptions) -> Result<GlobalObjectiveReport> {
    check_enumerable(p, opts.limit)?;
    if targets.nrows() != p.vocab_size() {
        return Err(Error::Shape(format!("{} targets for V={}", targets.nrows(), p.vocab_size())));
    }
    let targets = targets.as_standard_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(p.n_contexts());
    for (i, row) in p.p.rows().into_iter().enumerate() {
        let init: Vec<f64> = (0..targets.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let avg = weighted_average_target(row, targets.view())?;
        let (c, iterations) = optimize_context(row, targets.view(), init, opts)?;
        out.push(ContextDirection {
            row: i,
            count: p.context_counts[i],
            similarity: cosine(&c, &avg),
            iterations,
        });
    }
    Ok(GlobalObjectiveReport::assemble("direct", out))
}

/// The same comparison for a trained encoder: `c` is the encoder output for
/// each context.
pub fn encoder_direction_check(
    p: &ConditionalProbMatrix,
    targets: ArrayView2<f64>,
    params: &EncoderParams,
    embedder: &ContextEmbedder,
    limit: usize,
) -> Result<GlobalObjectiveReport> {
    check_enumerable(p, limit)?;
    let mut out = Vec::with_capacity(p.n_contexts());
    for (i, (row, ctx)) in p.p.rows().into_iter().zip(&p.contexts).enumerate() {
        let (c, _) = params.forward(&embedder.embed(ctx)?)?;
        let avg = weighted_average_target(row, targets)?;
        out.push(ContextDirection {
            row: i,
            count: p.context_counts[i],
            similarity: cosine(&c, &avg),
            iterations: 0,
        });
    }
    Ok(GlobalObjectiveReport::assemble("encoder", out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCandidate {
    pub name: String,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub rank: usize,
    pub centered: bool,
    /// `||P - P_m||_F` from the discarded singular values.
    pub truncation_error: f64,
    pub svd_error: f64,
    pub candidates: Vec<ProjectionCandidate>,
    /// SVD error is no larger than any other candidate's.
    pub svd_is_minimal: bool,
}

impl ProjectionReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "projection study (rank {}, centered {})", self.rank, self.centered);
        let _ = writeln!(s, "{:<24} {:>16}", "candidate", "error");
        let _ = writeln!(s, "{:<24} {:>16.10}", "svd", self.svd_error);
        for c in &self.candidates {
            let _ = writeln!(s, "{:<24} {:>16.10}", c.name, c.error);
        }
        let _ = writeln!(s, "truncation error {:.10}  svd minimal {}", self.truncation_error, self.svd_is_minimal);
        s
    }
}

/// Subtracts each column's mean.
pub fn center_columns(p: ArrayView2<f64>) -> Array2<f64> {
    let mean = p.mean_axis(Axis(0)).expect("non-empty matrix");
    &p - &mean
}

/// Reconstruction error of `P` from `P W` for the SVD projection `V_m`,
/// every supplied `V x m` candidate and `n_random` Gaussian projections.
pub fn svd_projection_study(
    p: ArrayView2<f64>,
    rank: usize,
    candidates: &[(String, Array2<f64>)],
    n_random: usize,
    seed: u64,
    center: bool,
) -> Result<ProjectionReport> {
    let (n, v) = p.dim();
    if rank == 0 || rank > n.min(v) {
        return Err(Error::Config(format!("projection rank {rank} must lie in 1..={}", n.min(v))));
    }
    let m = if center { center_columns(p) } else { p.to_owned() };
    let dec = if n.min(v) <= linalg::EXACT_SVD_LIMIT {
        linalg::svd(m.view())
    } else {
        linalg::truncated_svd(m.view(), rank, seed)
    };
    let truncation_error = dec.s.iter().skip(rank).map(|x| x * x).sum::<f64>().sqrt();
    let vm = dec.vt.slice(s![..rank, ..]).t().to_owned();
    let err = |w: &Array2<f64>| least_squares_residual(m.view(), m.dot(w).view(), PINV_TOL);
    let svd_error = err(&vm);

    let mut out = Vec::new();
    for (name, w) in candidates {
        if w.dim() != (v, rank) {
            return Err(Error::Shape(format!("candidate {name} is {:?}, expected ({v}, {rank})", w.dim())));
        }
        out.push(ProjectionCandidate {
            name: name.clone(),
            error: err(w),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..n_random {
        let w = Array2::from_shape_fn((v, rank), |_| StandardNormal.sample(&mut rng));
        out.push(ProjectionCandidate {
            name: format!("random-{t}"),
            error: err(&w),
        });
    }
    // Round-off in the residual is of order eps * ||P||.
    let slack = 1e-9 * linalg::frobenius(m.view()).max(1.0);
    let svd_is_minimal = out.iter().all(|c| svd_error <= c.error + slack);
    Ok(ProjectionReport {
        rank,
        centered: center,
        truncation_error,
        svd_error,
        candidates: out,
        svd_is_minimal,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMetric {
    Cosine,
    L2,
}

/// Nearest target row to `c`: largest `c_bar . w` or smallest `||c - w||`.
/// Ties go to the lowest id.
pub fn nn_decode(c: &[f64], table: ArrayView2<f64>, metric: DecodeMetric) -> Result<usize> {
    if table.nrows() == 0 {
        return Err(Error::Config("cannot decode against an empty table".into()));
    }
    if c.len() != table.ncols() {
        return Err(Error::Shape(format!("context of length {} for table dim {}", c.len(), table.ncols())));
    }
    let score: Box<dyn Fn(ArrayView1<f64>) -> f64> = match metric {
        DecodeMetric::Cosine => {
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > crate::output::MIN_CONTEXT_NORM) {
                return Err(Error::DegenerateContext(n));
            }
            Box::new(move |w| w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / n)
        }
        DecodeMetric::L2 => Box::new(|w| -w.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()),
    };
    let mut best = (0, f64::NEG_INFINITY);
    for (i, w) in table.rows().into_iter().enumerate() {
        let sc = score(w);
        if sc > best.1 {
            best = (i, sc);
        }
    }
    Ok(best.0)
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in row.iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRow {
    pub row: usize,
    pub argmax: usize,
    /// `None` when the weighted average is degenerate under cosine.
    pub decoded: Option<usize>,
    pub agree: bool,
    pub sharpness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessBin {
    pub lo: f64,
    pub hi: f64,
    pub contexts: usize,
    pub agreements: usize,
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub metric: DecodeMetric,
    pub rows: Vec<DecodeRow>,
    pub agreement_rate: f64,
    pub bins: Vec<SharpnessBin>,
}

impl DecodeReport {
    pub fn disagreements(&self) -> impl Iterator<Item = &DecodeRow> {
        self.rows.iter().filter(|r| !r.agree)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "decode agreement ({:?}): {:.4}", self.metric, self.agreement_rate);
        let _ = writeln!(s, "{:>12} {:>10} {:>10} {:>8}", "sharpness", "contexts", "agree", "rate");
        for b in &self.bins {
            let rate = b.rate.map_or("-".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(s, "{:>5.2}-{:<6.2} {:>10} {:>10} {:>8}", b.lo, b.hi, b.contexts, b.agreements, rate);
        }
        s
    }

    /// Writes each disagreement with its full distribution so the instance
    /// can be replayed: `row  argmax  decoded  sharpness  id:p,id:p,...`.
    pub fn write_disagreements_tsv<W: Write>(&self, p: ArrayView2<f64>, mut out: W) -> Result<()> {
        writeln!(out, "row\targmax\tdecoded\tsharpness\tdistribution")?;
        for r in self.disagreements() {
            let dist: Vec<String> = p
                .row(r.row)
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(i, x)| format!("{i}:{x:e}"))
                .collect();
            let decoded = r.decoded.map_or("-".to_string(), |d| d.to_string());
            writeln!(out, "{}\t{}\t{}\t{:e}\t{}", r.row, r.argmax, decoded, r.sharpness, dist.join(","))?;
        }
        Ok(())
    }
}

/// A replayable disagreement: the row index and its sparse distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct DisagreementFixture {
    pub row: usize,
    pub argmax: usize,
    pub decoded: Option<usize>,
    pub distribution: Vec<(usize, f64)>,
}

pub fn read_disagreements_tsv<R: BufRead>(input: R) -> Result<Vec<DisagreementFixture>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate().skip(1) {
        let line = line?;
        let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.into() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let distribution = f[4]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|kv| {
                let (k, v) = kv.split_once(':').ok_or_else(|| bad("bad distribution entry"))?;
                Ok((num(k)?, v.parse::<f64>().map_err(|_| bad("bad probability"))?))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(DisagreementFixture {
            row: num(f[0])?,
            argmax: num(f[1])?,
            decoded: if f[2] == "-" { None } else { Some(num(f[2])?) },
            distribution,
        });
    }
    Ok(out)
}

/// Compares `argmax_w p(w|c)` with the nearest neighbour of the weighted
/// average target for every row of `p`.
pub fn decode_agreement(p: ArrayView2<f64>, w: ArrayView2<f64>, metric: DecodeMetric) -> Result<DecodeReport> {
    let mut rows = Vec::with_capacity(p.nrows());
    for (i, row) in p.rows().into_iter().enumerate() {
        let am = argmax(row);
        let avg = weighted_average_target(row, w)?;
        let decoded = match nn_decode(&avg, w, metric) {
            Ok(d) => Some(d),
            Err(Error::DegenerateContext(_)) => None,
            Err(e) => return Err(e),
        };
        rows.push(DecodeRow {
            row: i,
            argmax: am,
            decoded,
            agree: decoded == Some(am),
            sharpness: row[am],
        });
    }
    let agreement_rate = if rows.is_empty() {
        f64::NAN
    } else {
        rows.iter().filter(|r| r.agree).count() as f64 / rows.len() as f64
    };
    let bins = SHARPNESS_BINS
        .windows(2)
        .enumerate()
        .map(|(b, e)| {
            let last = b == SHARPNESS_BINS.len() - 2;
            let inside: Vec<&DecodeRow> = rows
                .iter()
                .filter(|r| r.sharpness >= e[0] && (r.sharpness < e[1] || (last && r.sharpness <= e[1])))
                .collect();
            let agreements = inside.iter().filter(|r| r.agree).count();
            SharpnessBin {
                lo: e[0],
                hi: e[1],
                contexts: inside.len(),
                agreements,
                rate: (!inside.is_empty()).then(|| agreements as f64 / inside.len() as f64),
            }
        })
        .collect();
    Ok(DecodeReport {
        metric,
        rows,
        agreement_rate,
        bins,
    })
}

/// `exp` of the mean negative log-likelihood of `targets` given row-major
/// context vectors `cs`. Only normalized layers define it.
pub fn perplexity<L: OutputLayer<f64> + ?Sized>(layer: &L, cs: &[f64], targets: &[usize]) -> Result<f64> {
    if !layer.kind().is_normalized() {
        return Err(Error::PerplexityUndefined);
    }
    let m = layer.dim();
    if cs.len() != targets.len() * m || targets.is_empty() {
        return Err(Error::Shape(format!("{} context values for {} targets", cs.len(), targets.len())));
    }
    let mut nll = 0.0;
    for (c, &t) in cs.chunks_exact(m).zip(targets) {
        nll -= layer.log_prob(c, t)?;
    }
    Ok((nll / targets.len() as f64).exp())
}

/// Perplexity of the maximum-likelihood unigram model on its own counts.
pub fn unigram_perplexity(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("unigram perplexity of an empty corpus".into()));
    }
    let n = total as f64;
    let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| -(c as f64) * (c as f64 / n).ln()).sum::<f64>() / n;
    Ok(h.exp())
}
