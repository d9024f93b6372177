//! Batched loss, its exact gradient, Adam, candidate screening and the
//! two-phase learning pipeline (global candidate scan, then local fine-tuning).

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::spectral::{CompiledScheme, FlowKind, SpectralProblem, StateVector};
use crate::splitcore::{transform_jacobian, ReducedCoeffs, SplitCoeffs};

/// Coefficient magnitude beyond which a candidate is treated as diverged.
pub const GAMMA_CAP: f64 = 10.0;

/// `T / h` as an integer step count.
pub fn step_count(t: f64, h: f64) -> Result<usize> {
    if !(h.is_finite() && h != 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("bad time grid T = {t}, h = {h}")));
    }
    let n = t / h;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::invalid(format!(
            "T / h = {n} is not a positive integer"
        )));
    }
    Ok(r as usize)
}

fn check_batch(pairs: &[(StateVector, StateVector)], problem: &SpectralProblem) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    for (u0, uref) in pairs {
        if u0.len() != problem.len() || uref.len() != problem.len() {
            return Err(Error::DimensionMismatch {
                expected: problem.len(),
                got: u0.len().min(uref.len()),
            });
        }
    }
    Ok(())
}

/// Per-sample errors `||Psi(u0) - u_ref||_2` of an arbitrary scheme.
pub fn sample_errors(
    problem: &SpectralProblem,
    coeffs: &SplitCoeffs,
    pairs: &[(StateVector, StateVector)],
    h: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let compiled = problem.compile(coeffs, h, n);
    pairs
        .par_iter()
        .map_init(
            || problem.scratch(),
            |scratch, (u0, uref)| {
                let mut buf = u0.0.clone();
                problem.run_compiled(&compiled, &mut buf, scratch)?;
                Ok(StateVector(buf).distance(uref))
            },
        )
        .collect()
}

/// Mean squared error of an arbitrary scheme over `pairs`.
pub fn scheme_loss(
    problem: &SpectralProblem,
    coeffs: &SplitCoeffs,
    pairs: &[(StateVector, StateVector)],
    h: f64,
    n: usize,
) -> Result<f64> {
    check_batch(pairs, problem)?;
    let errs = sample_errors(problem, coeffs, pairs, h, n)?;
    Ok(errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64)
}

/// `(1/|B|) sum ||Psi_h^N(u0) - u_ref||^2` for `expand(gamma)`, `N = T / h`.
pub fn batch_loss(
    problem: &SpectralProblem,
    gamma: &ReducedCoeffs,
    pairs: &[(StateVector, StateVector)],
    t: f64,
    h: f64,
) -> Result<f64> {
    let n = step_count(t, h)?;
    scheme_loss(problem, &gamma.expand(), pairs, h, n)
}

/// Loss and its gradient with respect to the full `(alpha, beta)` vector.
///
/// Reverse accumulation: the forward pass stores the output of every
/// subflow, the adjoint is pulled back through the inverse (conjugate)
/// phases, and each subflow contributes `2 Re <lambda, -i h G s>` where `G`
/// is `V` or `kappa^2`.
pub fn coeff_loss_gradient(
    problem: &SpectralProblem,
    coeffs: &SplitCoeffs,
    pairs: &[(StateVector, StateVector)],
    h: f64,
    n: usize,
) -> Result<(f64, Vec<f64>)> {
    check_batch(pairs, problem)?;
    let compiled = problem.compile(coeffs, h, n);
    let k = coeffs.stages();
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = pairs
        .par_iter()
        .map_init(
            || problem.scratch(),
            |scratch, (u0, uref)| sample_gradient(problem, &compiled, k, h, u0, uref, scratch),
        )
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; 2 * k];
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / pairs.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

fn sample_gradient(
    problem: &SpectralProblem,
    compiled: &CompiledScheme,
    k: usize,
    h: f64,
    u0: &StateVector,
    uref: &StateVector,
    scratch: &mut [Complex64],
) -> Result<(f64, Vec<f64>)> {
    let m = problem.len();
    let schedule = &compiled.schedule;
    let ops = &schedule.ops;
    // stored[p]: output of op p, in Fourier space (scaled by 1/M) for kinetic ops
    let mut stored = vec![Complex64::new(0.0, 0.0); ops.len() * m];
    let mut buf = u0.0.clone();
    for (p, &op) in ops.iter().enumerate() {
        let table = &schedule.tables[op];
        let phases = &compiled.phases[op];
        let slot = &mut stored[p * m..(p + 1) * m];
        match table.kind {
            FlowKind::Potential => {
                for (u, ph) in buf.iter_mut().zip(phases) {
                    *u *= ph;
                }
                slot.copy_from_slice(&buf);
            }
            FlowKind::Kinetic => {
                problem.fft_forward(&mut buf, scratch);
                for (u, ph) in buf.iter_mut().zip(phases) {
                    *u *= ph;
                }
                slot.copy_from_slice(&buf);
                problem.fft_inverse(&mut buf, scratch);
            }
        }
        if (p + 1) % schedule.ops_per_step == 0 && !buf.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFiniteState {
                step: (p + 1) / schedule.ops_per_step,
            });
        }
    }
    if !buf.iter().all(|z| z.is_finite()) {
        return Err(Error::NonFiniteState {
            step: schedule.steps,
        });
    }
    let mut lambda: Vec<Complex64> = buf.iter().zip(&uref.0).map(|(a, b)| a - b).collect();
    let loss: f64 = lambda.iter().map(|z| z.norm_sqr()).sum();

    let v = problem.potential().samples();
    let k2 = problem.kinetic_symbol();
    let mut grad = vec![0.0; 2 * k];
    for (p, &op) in ops.iter().enumerate().rev() {
        let table = &schedule.tables[op];
        let phases = &compiled.phases[op];
        let s = &stored[p * m..(p + 1) * m];
        let d = match table.kind {
            FlowKind::Potential => {
                // Re <lambda, -i V s> = Im sum conj(lambda) V s
                let mut acc = 0.0;
                for i in 0..m {
                    acc += v[i] * (lambda[i].conj() * s[i]).im;
                }
                for (l, ph) in lambda.iter_mut().zip(phases) {
                    *l *= ph.conj();
                }
                acc
            }
            FlowKind::Kinetic => {
                problem.fft_forward(&mut lambda, scratch);
                let mut acc = 0.0;
                for i in 0..m {
                    acc += k2[i] * (lambda[i].conj() * s[i]).im;
                }
                for (l, ph) in lambda.iter_mut().zip(phases) {
                    *l *= ph.conj();
                }
                problem.fft_inverse(&mut lambda, scratch);
                acc
            }
        };
        let contribution = 2.0 * h * d;
        for &param in &table.params {
            grad[param] += contribution;
        }
    }
    Ok((loss, grad))
}

/// Loss and gradient in reduced coordinates.
pub fn batch_loss_gradient(
    problem: &SpectralProblem,
    gamma: &ReducedCoeffs,
    pairs: &[(StateVector, StateVector)],
    t: f64,
    h: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = step_count(t, h)?;
    let k = gamma.stages();
    let (loss, g_full) = coeff_loss_gradient(problem, &gamma.expand(), pairs, h, n)?;
    let jac = transform_jacobian(k);
    let mut g = vec![0.0; k - 2];
    for (row, gf) in jac.iter().zip(&g_full) {
        for (gj, r) in g.iter_mut().zip(row) {
            *gj += r * gf;
        }
    }
    Ok((loss, g))
}

/// Adam moments and the current iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub gamma: ReducedCoeffs,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(gamma: ReducedCoeffs) -> Self {
        let n = gamma.gamma().len();
        Self {
            gamma,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
        }
    }
}

/// Seam for swapping the stochastic optimiser.
pub trait StochasticOptimizer {
    fn step(&self, state: &OptimizerState, grad: &[f64], lr: f64) -> Result<OptimizerState>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl StochasticOptimizer for Adam {
    fn step(&self, state: &OptimizerState, grad: &[f64], lr: f64) -> Result<OptimizerState> {
        let n = state.first_moment.len();
        if grad.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: grad.len(),
            });
        }
        let t = state.step_count + 1;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let mut m = state.first_moment.clone();
        let mut v = state.second_moment.clone();
        let mut gamma = state.gamma.gamma().to_vec();
        for i in 0..n {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            gamma[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(OptimizerState {
            gamma: ReducedCoeffs::new(state.gamma.stages(), gamma)?,
            first_moment: m,
            second_moment: v,
            step_count: t,
        })
    }
}

/// One Adam step with the standard hyperparameters.
pub fn adam_step(state: &OptimizerState, grad: &[f64], lr: f64) -> Result<OptimizerState> {
    Adam::default().step(state, grad, lr)
}

/// A candidate with its loss on the fixed validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub index: usize,
    pub gamma: Vec<f64>,
    pub loss: f64,
}

/// Keep candidates within `epsilon` of the best loss, truncate to the
/// `keep_best` lowest, then drop every candidate that has a strictly lower
/// loss candidate within distance `delta`. Non-finite losses are dropped.
pub fn screen_candidates(
    scored: &[ScoredCandidate],
    epsilon: f64,
    delta: f64,
    keep_best: Option<usize>,
) -> Vec<ScoredCandidate> {
    let mut pool: Vec<&ScoredCandidate> = scored.iter().filter(|c| c.loss.is_finite()).collect();
    pool.sort_by(|a, b| a.loss.total_cmp(&b.loss).then(a.index.cmp(&b.index)));
    let Some(best) = pool.first().map(|c| c.loss) else {
        return Vec::new();
    };
    pool.retain(|c| c.loss <= best + epsilon);
    if let Some(k) = keep_best {
        pool.truncate(k);
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    pool.iter()
        .filter(|c| {
            !pool
                .iter()
                .any(|o| o.loss < c.loss && dist(&o.gamma, &c.gamma) <= delta)
        })
        .map(|c| (*c).clone())
        .collect()
}

/// Score candidates on the validation set, in parallel.
///
/// Candidates whose magnitude exceeds [`GAMMA_CAP`] or whose flow overflows
/// get an infinite loss.
pub fn score_candidates(
    problem: &SpectralProblem,
    stages: usize,
    candidates: &[Vec<f64>],
    valid: &[(StateVector, StateVector)],
    t: f64,
    h: f64,
) -> Result<Vec<ScoredCandidate>> {
    check_batch(valid, problem)?;
    let n = step_count(t, h)?;
    candidates
        .par_iter()
        .enumerate()
        .map(|(index, g)| {
            let gamma = ReducedCoeffs::new(stages, g.clone())?;
            let loss = if g.iter().any(|x| x.abs() > GAMMA_CAP) {
                f64::INFINITY
            } else {
                match scheme_loss_serial(problem, &gamma.expand(), valid, h, n) {
                    Ok(l) => l,
                    Err(Error::NonFiniteState { .. }) => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            };
            Ok(ScoredCandidate {
                index,
                gamma: g.clone(),
                loss,
            })
        })
        .collect()
}

fn scheme_loss_serial(
    problem: &SpectralProblem,
    coeffs: &SplitCoeffs,
    pairs: &[(StateVector, StateVector)],
    h: f64,
    n: usize,
) -> Result<f64> {
    let compiled = problem.compile(coeffs, h, n);
    let mut scratch = problem.scratch();
    let mut buf = vec![Complex64::new(0.0, 0.0); problem.len()];
    let mut total = 0.0;
    for (u0, uref) in pairs {
        buf.copy_from_slice(&u0.0);
        problem.run_compiled(&compiled, &mut buf, &mut scratch)?;
        total += buf
            .iter()
            .zip(&uref.0)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

/// How candidates are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateSpec {
    /// Every vertex of a regular grid with spacing `step` covering `[lo, hi]^(K-2)`.
    Grid { lo: f64, hi: f64, step: f64 },
    /// `count` independent uniform draws from `[lo, hi]^(K-2)`.
    Random { count: usize, lo: f64, hi: f64 },
}

impl CandidateSpec {
    pub fn generate(&self, dims: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        match *self {
            CandidateSpec::Grid { lo, hi, step } => {
                if !(step > 0.0 && lo <= hi) {
                    return Err(Error::invalid("grid needs lo <= hi and step > 0"));
                }
                let per_dim = ((hi - lo) / step + 1e-9).floor() as usize + 1;
                let axis: Vec<f64> = (0..per_dim).map(|i| lo + i as f64 * step).collect();
                let total = per_dim.checked_pow(dims as u32).ok_or_else(|| {
                    Error::invalid("candidate grid is too large")
                })?;
                Ok((0..total)
                    .map(|mut idx| {
                        let mut g = vec![0.0; dims];
                        for slot in g.iter_mut().rev() {
                            *slot = axis[idx % per_dim];
                            idx /= per_dim;
                        }
                        g
                    })
                    .collect())
            }
            CandidateSpec::Random { count, lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::invalid("random box needs lo < hi"));
                }
                Ok((0..count)
                    .map(|_| (0..dims).map(|_| rng.random_range(lo..hi)).collect())
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stages: usize,
    pub t: f64,
    pub h: f64,
    pub candidates: CandidateSpec,
    pub keep_best: Option<usize>,
    /// `None`: ten times the best screening loss.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation loss is traced every this many iterations (0 disables).
    pub val_every: usize,
}

impl TrainConfig {
    /// Five-stage grid search with a flat learning rate.
    pub fn k5_defaults() -> Self {
        Self {
            stages: 5,
            t: 10.0,
            h: 1.0 / 7.0,
            candidates: CandidateSpec::Grid {
                lo: -0.5,
                hi: 0.4,
                step: 0.1,
            },
            keep_best: None,
            epsilon: None,
            delta: 0.15,
            iterations: 250,
            learning_rate: 0.01,
            decay_rate: 1.0,
            batch_size: 100,
            seed: 0,
            val_every: 1,
        }
    }

    /// Eight-stage random search with a decaying learning rate.
    pub fn k8_defaults() -> Self {
        Self {
            stages: 8,
            candidates: CandidateSpec::Random {
                count: 75_000,
                lo: -0.5,
                hi: 0.5,
            },
            keep_best: Some(100),
            delta: 0.75,
            learning_rate: 0.02,
            decay_rate: 0.995,
            ..Self::k5_defaults()
        }
    }

    pub fn validate(&self) -> Result<usize> {
        if self.stages < 3 {
            return Err(Error::invalid("training needs K >= 3"));
        }
        let n = step_count(self.t, self.h)?;
        if self.h <= 0.0 {
            return Err(Error::invalid("step size must be positive"));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return Err(Error::invalid("epsilon must be non-negative"));
            }
        }
        if !(self.delta >= 0.0) {
            return Err(Error::invalid("delta must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::invalid("decay rate must lie in (0, 1]"));
        }
        if self.iterations > 0 && self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardEntry {
    pub gamma: Vec<f64>,
    pub validation_loss: f64,
    pub candidate: usize,
    pub iteration: usize,
    pub screening_loss: f64,
    pub diverged: bool,
}

/// Fine-tuned candidates ranked by validation loss; diverged ones last.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    pub entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn from_entries(mut entries: Vec<LeaderboardEntry>) -> Self {
        entries.sort_by(|a, b| {
            a.diverged
                .cmp(&b.diverged)
                .then(a.validation_loss.total_cmp(&b.validation_loss))
                .then(a.candidate.cmp(&b.candidate))
        });
        Self { entries }
    }

    pub fn head(&self) -> Option<&LeaderboardEntry> {
        self.entries.first()
    }

    /// `rank,gamma1..,valLoss,flag`.
    pub fn to_csv(&self) -> String {
        let dims = self.entries.first().map_or(0, |e| e.gamma.len());
        let mut out = String::from("rank");
        for i in 1..=dims {
            let _ = write!(out, ",gamma{i}");
        }
        out.push_str(",valLoss,flag,candidate,iterations\n");
        for (rank, e) in self.entries.iter().enumerate() {
            let _ = write!(out, "{}", rank + 1);
            for g in &e.gamma {
                let _ = write!(out, ",{g:.16e}");
            }
            let flag = if e.diverged { "diverged" } else { "ok" };
            let _ = writeln!(
                out,
                ",{:.16e},{flag},{},{}",
                e.validation_loss, e.candidate, e.iteration
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub candidate: usize,
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub gamma: Vec<f64>,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let dims = rows.first().map_or(0, |r| r.gamma.len());
    let mut out = String::from("candidate,iteration,trainLoss,valLoss");
    for i in 1..=dims {
        let _ = write!(out, ",gamma{i}");
    }
    out.push('\n');
    for r in rows {
        let val = r.val_loss.map(|v| format!("{v:.16e}")).unwrap_or_default();
        let _ = write!(
            out,
            "{},{},{:.16e},{val}",
            r.candidate, r.iteration, r.train_loss
        );
        for g in &r.gamma {
            let _ = write!(out, ",{g:.16e}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub leaderboard: Leaderboard,
    pub trace: Vec<TraceRow>,
    pub screened: Vec<ScoredCandidate>,
    pub candidate_count: usize,
    pub epsilon: f64,
}

/// Random stream for candidate generation; fine-tuning of screened
/// candidate `i` uses stream `i + 1`. All streams share the config seed.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn run_pipeline(
    problem: &SpectralProblem,
    config: &TrainConfig,
    train: &Dataset,
    valid: &Dataset,
) -> Result<PipelineOutput> {
    config.validate()?;
    train.check_compatible(problem, config.t)?;
    valid.check_compatible(problem, config.t)?;
    if valid.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    if config.iterations > 0 && train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let dims = config.stages - 2;
    let candidates = config
        .candidates
        .generate(dims, &mut stream_rng(config.seed, 0))?;
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates generated"));
    }
    let scored = score_candidates(
        problem,
        config.stages,
        &candidates,
        &valid.pairs,
        config.t,
        config.h,
    )?;
    let best = scored
        .iter()
        .map(|c| c.loss)
        .filter(|l| l.is_finite())
        .fold(f64::INFINITY, f64::min);
    let epsilon = config.epsilon.unwrap_or(10.0 * best);
    let screened = screen_candidates(&scored, epsilon, config.delta, config.keep_best);
    log::info!(
        "{} candidates, best screening loss {best:.4e}, {} survive screening",
        candidates.len(),
        screened.len()
    );

    let results: Vec<Result<(LeaderboardEntry, Vec<TraceRow>)>> = screened
        .par_iter()
        .enumerate()
        .map(|(slot, c)| fine_tune(problem, config, train, valid, slot as u64, c))
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut trace = Vec::new();
    for r in results {
        let (e, rows) = r?;
        entries.push(e);
        trace.extend(rows);
    }
    Ok(PipelineOutput {
        leaderboard: Leaderboard::from_entries(entries),
        trace,
        screened,
        candidate_count: candidates.len(),
        epsilon,
    })
}

fn fine_tune(
    problem: &SpectralProblem,
    config: &TrainConfig,
    train: &Dataset,
    valid: &Dataset,
    slot: u64,
    start: &ScoredCandidate,
) -> Result<(LeaderboardEntry, Vec<TraceRow>)> {
    let mut rng = stream_rng(config.seed, slot + 1);
    let mut state = OptimizerState::new(ReducedCoeffs::new(config.stages, start.gamma.clone())?);
    let mut rows = Vec::new();
    let mut diverged = false;
    let mut done = 0;
    let adam = Adam::default();
    for it in 0..config.iterations {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..train.len()))
            .collect();
        let batch = train.select(&idx);
        let (loss, grad) =
            match batch_loss_gradient(problem, &state.gamma, &batch.pairs, config.t, config.h) {
                Ok(r) => r,
                Err(Error::NonFiniteState { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            diverged = true;
            break;
        }
        let val_loss = if config.val_every > 0 && it % config.val_every == 0 {
            Some(batch_loss(problem, &state.gamma, &valid.pairs, config.t, config.h)?)
        } else {
            None
        };
        rows.push(TraceRow {
            candidate: start.index,
            iteration: it,
            train_loss: loss,
            val_loss,
            gamma: state.gamma.gamma().to_vec(),
        });
        let lr = config.learning_rate * config.decay_rate.powi(it as i32);
        state = adam.step(&state, &grad, lr)?;
        done = it + 1;
        if state.gamma.gamma().iter().any(|g| g.abs() > GAMMA_CAP) {
            diverged = true;
            break;
        }
    }
    let gamma = state.gamma.gamma().to_vec();
    let validation_loss = if diverged {
        f64::INFINITY
    } else if config.iterations == 0 {
        start.loss
    } else {
        match batch_loss(problem, &state.gamma, &valid.pairs, config.t, config.h) {
            Ok(l) => l,
            Err(Error::NonFiniteState { .. }) => {
                diverged = true;
                f64::INFINITY
            }
            Err(e) => return Err(e),
        }
    };
    if diverged {
        log::warn!("candidate {} diverged after {done} iterations", start.index);
    }
    Ok((
        LeaderboardEntry {
            gamma,
            validation_loss,
            candidate: start.index,
            iteration: done,
            screening_loss: start.loss,
            diverged,
        },
        rows,
    ))
}

/// Eigenvalues and condition number of a finite-difference Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    pub eigenvalues: Vec<f64>,
    pub condition_number: f64,
    /// A negative eigenvalue beyond round-off was found.
    pub indefinite: bool,
}

/// Central-difference Hessian of `f` at `x`, symmetrised.
pub fn fd_hessian<F>(f: F, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = x.len();
    let at = |d: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in d {
            y[i] += s;
        }
        f(&y)
    };
    let f0 = f(x)?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                let p = at(&[(i, step)])?;
                let m = at(&[(i, -step)])?;
                Ok((p - 2.0 * f0 + m) / (step * step))
            } else {
                let pp = at(&[(i, step), (j, step)])?;
                let pm = at(&[(i, step), (j, -step)])?;
                let mp = at(&[(i, -step), (j, step)])?;
                let mm = at(&[(i, -step), (j, -step)])?;
                Ok((pp - pm - mp + mm) / (4.0 * step * step))
            }
        })
        .collect();
    let mut hmat = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        let v = v?;
        hmat[(i, j)] = v;
        hmat[(j, i)] = v;
    }
    Ok(hmat)
}

pub fn hessian_report(hmat: DMatrix<f64>) -> HessianReport {
    let eig = SymmetricEigen::new(hmat);
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let mags = eigenvalues.iter().map(|e| e.abs());
    let max = mags.clone().fold(0.0, f64::max);
    let min = mags.fold(f64::INFINITY, f64::min);
    let indefinite = eigenvalues.first().is_some_and(|&e| e < -1e-8 * max);
    HessianReport {
        eigenvalues,
        condition_number: max / min,
        indefinite,
    }
}

/// Condition number of the validation-loss Hessian at `gamma` (step `1e-4`).
pub fn hessian_condition_number(
    problem: &SpectralProblem,
    gamma: &ReducedCoeffs,
    valid: &[(StateVector, StateVector)],
    t: f64,
    h: f64,
) -> Result<HessianReport> {
    let n = step_count(t, h)?;
    let k = gamma.stages();
    let f = |g: &[f64]| {
        let r = ReducedCoeffs::new(k, g.to_vec())?;
        scheme_loss_serial(problem, &r.expand(), valid, h, n)
    };
    let report = hessian_report(fd_hessian(f, gamma.gamma(), 1e-4)?);
    if report.indefinite {
        log::warn!(
            "Hessian at {:?} has a negative eigenvalue {:.3e}; not a minimum",
            gamma.gamma(),
            report.eigenvalues[0]
        );
    }
    Ok(report)
}
