//! Training: the projected SGD recursion driven by MLMC gradients, a
//! deterministic full-gradient solver, cross-validation of the radius, and
//! the norm-penalized logistic baseline.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{build_support, is_class_label, LabeledExample, SupportSet, UnlabeledExample};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2};
use crate::loss::Loss;
use crate::mlmc::unbiased_gradient_at;
use crate::objective::{DroProblem, DualIterate, SmoothingConfig};
use crate::transport::TransportCost;

/// How the SGD recursion obtains its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Randomized multilevel Monte Carlo at a uniformly drawn labeled sample.
    Mlmc,
    /// Exact `grad phi_eps` at a uniformly drawn labeled sample.
    ExactSample,
    /// Exact gradient of the full empirical objective (no sampling).
    FullBatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Averaging {
    None,
    /// Average the iterates of the final `fraction` of the run.
    Tail(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    /// Step `alpha_k = a / (b + k)`.
    pub a: f64,
    pub b: f64,
    pub iterations: usize,
    pub batch: usize,
    pub averaging: Averaging,
    pub seed: u64,
    pub mode: GradientMode,
    /// Multiplier on the lambda step (1 reproduces the plain recursion).
    pub lambda_step_scale: f64,
    pub init_lambda: f64,
    /// Record the full smoothed objective every this many iterations (0: never).
    pub trace_every: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            a: 1.0,
            b: 10.0,
            iterations: 50_000,
            batch: 8,
            averaging: Averaging::Tail(0.25),
            seed: 0,
            mode: GradientMode::Mlmc,
            lambda_step_scale: 1.0,
            init_lambda: 1.0,
            trace_every: 1000,
        }
    }
}

impl SgdConfig {
    pub fn step(&self, k: usize) -> f64 {
        self.a / (self.b + k as f64)
    }

    fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite() && self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::invalid("step schedule needs a > 0 and b >= 0"));
        }
        if self.iterations == 0 || self.batch == 0 {
            return Err(Error::invalid("iterations and batch must be positive"));
        }
        if let Averaging::Tail(f) = self.averaging {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid("tail fraction must be in (0, 1]"));
            }
        }
        if !(self.lambda_step_scale > 0.0 && self.init_lambda >= 0.0) {
            return Err(Error::invalid(
                "lambda step scale must be positive and initial lambda nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactConfig {
    /// Bound on the norm of the projected gradient.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            tolerance: 1e-6,
            max_iter: 100_000,
        }
    }
}

/// Which procedure produced a model, with its settings.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainMethod {
    Sgd(SgdConfig),
    Exact(ExactConfig),
    /// `E_{P_n}[l] + delta_bar * ||beta||_p` minimized by proximal descent.
    Baseline {
        delta_bar: f64,
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub delta_star: f64,
    pub epsilon: f64,
    pub loss: Loss,
    pub method: TrainMethod,
    /// Objective values recorded during training.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub fingerprint: u64,
}

impl TrainedModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x)
    }

    /// Class prediction with `sign(0) = +1`.
    pub fn classify(&self, x: &[f64]) -> f64 {
        if self.margin(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Mean loss of `beta` over `data` (log-loss for the logistic model).
pub fn mean_loss(loss: Loss, beta: &[f64], data: &[LabeledExample]) -> f64 {
    data.iter()
        .map(|ex| loss.value(&ex.x, ex.y, beta))
        .sum::<f64>()
        / data.len() as f64
}

/// Fraction of `data` with `sign(beta^T x) == y`, counting `sign(0)` as `+1`.
pub fn accuracy(beta: &[f64], data: &[LabeledExample]) -> f64 {
    let hits = data
        .iter()
        .filter(|ex| {
            let s = if dot(beta, &ex.x) >= 0.0 { 1.0 } else { -1.0 };
            s == ex.y
        })
        .count();
    hits as f64 / data.len() as f64
}

fn all_finite(it: &DualIterate) -> bool {
    it.lambda.is_finite() && it.beta.iter().all(|v| v.is_finite())
}

/// Minimizes `E_{P_n}[phi_eps]` by
/// `beta <- beta - alpha Gamma`, `lambda <- (lambda - alpha Lambda)^+`.
pub fn sgd_train(
    support: &SupportSet,
    tc: TransportCost,
    loss: Loss,
    smoothing: SmoothingConfig,
    config: &SgdConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let pb = DroProblem::new(support, tc, loss, smoothing)?;
    let n = pb.n_labeled();
    let d = pb.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut it = DualIterate::zeros(d, config.init_lambda);
    let k_total = config.iterations;
    let tail_start = match config.averaging {
        Averaging::None => k_total,
        Averaging::Tail(f) => k_total - ((f * k_total as f64).ceil() as usize).clamp(1, k_total),
    };
    let mut avg = DualIterate::zeros(d, 0.0);
    let mut trace = Vec::new();
    let mut gb = vec![0.0; d];
    let inv_batch = 1.0 / config.batch as f64;
    for k in 0..k_total {
        let alpha = config.step(k + 1);
        gb.iter_mut().for_each(|v| *v = 0.0);
        let mut gl = 0.0;
        match config.mode {
            GradientMode::Mlmc => {
                for _ in 0..config.batch {
                    let v = rng.random_range(0..n);
                    let s = unbiased_gradient_at(&pb, v, &it, &mut rng);
                    axpy(inv_batch, &s.gamma, &mut gb);
                    gl += inv_batch * s.lambda;
                }
            }
            GradientMode::ExactSample => {
                for _ in 0..config.batch {
                    let v = rng.random_range(0..n);
                    let (b, l) = pb.sample_gradient(v, &it);
                    axpy(inv_batch, &b, &mut gb);
                    gl += inv_batch * l;
                }
            }
            GradientMode::FullBatch => {
                let ev = pb.objective_and_gradient(&it);
                gb.copy_from_slice(&ev.dbeta);
                gl = ev.dlambda;
            }
        }
        axpy(-alpha, &gb, &mut it.beta);
        it.lambda = (it.lambda - alpha * config.lambda_step_scale * gl).max(0.0);
        if !all_finite(&it) {
            return Err(Error::Diverged(k + 1));
        }
        if k >= tail_start {
            axpy(1.0, &it.beta, &mut avg.beta);
            avg.lambda += it.lambda;
        }
        if config.trace_every > 0 && (k + 1) % config.trace_every == 0 {
            trace.push(pb.objective(&it));
        }
    }
    let fin = if tail_start < k_total {
        let m = (k_total - tail_start) as f64;
        avg.beta.iter_mut().for_each(|v| *v /= m);
        avg.lambda /= m;
        avg
    } else {
        it
    };
    Ok(TrainedModel {
        beta: fin.beta,
        lambda: fin.lambda,
        delta_star: smoothing.delta_star(),
        epsilon: smoothing.epsilon(),
        loss,
        method: TrainMethod::Sgd(config.clone()),
        trace,
        iterations: k_total,
        converged: true,
        fingerprint: support.fingerprint(),
    })
}

/// Output of the deterministic solver.
#[derive(Debug, Clone)]
pub struct ExactRun {
    pub iterate: DualIterate,
    pub value: f64,
    pub projected_gradient_norm: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn projected_gradient_norm(it: &DualIterate, dbeta: &[f64], dlambda: f64) -> f64 {
    let pl = (it.lambda - dlambda).max(0.0) - it.lambda;
    (norm2(dbeta).powi(2) + pl * pl).sqrt()
}

/// Limited-memory BFGS on `(beta, lambda >= 0)` from `start`, with the bound
/// handled by projection: while `lambda` sits at zero with a gradient pushing
/// it negative, it is frozen and the quasi-Newton step acts on `beta` only.
/// Reports rather than fails on the iteration cap.
pub fn exact_minimize(
    problem: &DroProblem<'_>,
    start: DualIterate,
    config: &ExactConfig,
) -> ExactRun {
    const MEMORY: usize = 10;
    let d = problem.dim();
    let pack = |g: &[f64], gl: f64| {
        let mut v = g.to_vec();
        v.push(gl);
        v
    };
    let mut x = start;
    x.lambda = x.lambda.max(0.0);
    let mut ev = problem.objective_and_gradient(&x);
    let mut g = pack(&ev.dbeta, ev.dlambda);
    let mut trace = vec![ev.value];
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(MEMORY);
    let mut pg = projected_gradient_norm(&x, &ev.dbeta, ev.dlambda);
    let mut iterations = 0;
    let mut converged = pg <= config.tolerance;
    let mut steepest = false;
    while !converged && iterations < config.max_iter {
        iterations += 1;
        let frozen = x.lambda == 0.0 && g[d] > 0.0;
        let mut q = g.clone();
        if frozen {
            q[d] = 0.0;
        }
        let mut dir = if steepest || pairs.is_empty() {
            let scale = if pairs.is_empty() {
                1.0 / norm2(&q).max(1e-300)
            } else {
                1.0
            };
            q.iter().map(|v| -scale * v).collect::<Vec<f64>>()
        } else {
            // Two-loop recursion.
            let mut alpha = vec![0.0; pairs.len()];
            for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
                alpha[k] = rho * dot(s, &q);
                axpy(-alpha[k], y, &mut q);
            }
            let (s, y, _) = pairs.last().expect("nonempty");
            let h0 = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= h0);
            for (k, (s, y, rho)) in pairs.iter().enumerate() {
                let b = rho * dot(y, &q);
                axpy(alpha[k] - b, s, &mut q);
            }
            q.iter_mut().for_each(|v| *v = -*v);
            q
        };
        if frozen {
            dir[d] = 0.0;
        }
        if dot(&g, &dir) >= 0.0 {
            pairs.clear();
            steepest = true;
            continue;
        }
        let mut t = 1.0;
        let accepted = loop {
            let mut trial = x.clone();
            axpy(t, &dir[..d], &mut trial.beta);
            trial.lambda = (x.lambda + t * dir[d]).max(0.0);
            let step_dot: f64 = (0..d)
                .map(|k| g[k] * (trial.beta[k] - x.beta[k]))
                .sum::<f64>()
                + g[d] * (trial.lambda - x.lambda);
            let ft = problem.objective(&trial);
            if ft.is_finite() && ft <= ev.value + 1e-4 * step_dot {
                break Some(trial);
            }
            t *= if ft.is_finite() { 0.5 } else { 0.1 };
            if t < 1e-16 {
                break None;
            }
        };
        let Some(trial) = accepted else {
            if steepest {
                break;
            }
            pairs.clear();
            steepest = true;
            continue;
        };
        steepest = false;
        let new_ev = problem.objective_and_gradient(&trial);
        let new_g = pack(&new_ev.dbeta, new_ev.dlambda);
        let mut s = trial
            .beta
            .iter()
            .zip(&x.beta)
            .map(|(a, b)| a - b)
            .collect::<Vec<f64>>();
        s.push(trial.lambda - x.lambda);
        let y: Vec<f64> = new_g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm2(&s) * norm2(&y) {
            if pairs.len() == MEMORY {
                pairs.remove(0);
            }
            pairs.push((s, y, 1.0 / sy));
        }
        x = trial;
        ev = new_ev;
        g = new_g;
        trace.push(ev.value);
        pg = projected_gradient_norm(&x, &ev.dbeta, ev.dlambda);
        converged = pg <= config.tolerance;
    }
    ExactRun {
        iterate: x,
        value: ev.value,
        projected_gradient_norm: pg,
        trace,
        iterations,
        converged,
    }
}

/// Deterministic minimization of `E_{P_n}[phi_eps]` with exact gradients,
/// starting from `beta = 0, lambda = 1`. Fails if the projected gradient
/// does not reach the tolerance.
pub fn exact_train(
    support: &SupportSet,
    tc: TransportCost,
    loss: Loss,
    smoothing: SmoothingConfig,
    config: &ExactConfig,
) -> Result<TrainedModel> {
    let pb = DroProblem::new(support, tc, loss, smoothing)?;
    let run = exact_minimize(&pb, DualIterate::zeros(pb.dim(), 1.0), config);
    if !run.converged {
        return Err(if run.iterations >= config.max_iter {
            Error::IterationCap(config.max_iter)
        } else {
            Error::NonConvergence("line search stalled above the gradient tolerance")
        });
    }
    Ok(exact_model(support, &pb, run, config))
}

fn exact_model(
    support: &SupportSet,
    pb: &DroProblem<'_>,
    run: ExactRun,
    config: &ExactConfig,
) -> TrainedModel {
    TrainedModel {
        beta: run.iterate.beta,
        lambda: run.iterate.lambda,
        delta_star: pb.config().delta_star(),
        epsilon: pb.config().epsilon(),
        loss: pb.loss(),
        method: TrainMethod::Exact(*config),
        trace: run.trace,
        iterations: run.iterations,
        converged: run.converged,
        fingerprint: support.fingerprint(),
    }
}

/// How cross-validation fits each fold.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainer {
    Exact(ExactConfig),
    Sgd(SgdConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMetric {
    /// Mean validation loss (log-loss for the logistic model); lower is better.
    Loss,
    /// Validation accuracy; higher is better.
    Accuracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub metric: CvMetric,
    pub trainer: Trainer,
    pub tc: TransportCost,
    pub loss: Loss,
    /// Smoothing temperature; `None` uses the default for each fold's support.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub delta: f64,
    pub mean: f64,
    pub std_error: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub delta_best: f64,
    pub table: Vec<CvRow>,
}

/// Fold index per example; stratified by label when all labels are `±1`.
pub fn fold_assignment(labeled: &[LabeledExample], k: usize) -> Vec<usize> {
    let stratify = labeled.iter().all(|ex| is_class_label(ex.y));
    let mut out = vec![0; labeled.len()];
    if stratify {
        let mut next = 0;
        for label in [1.0, -1.0] {
            for (i, ex) in labeled.iter().enumerate() {
                if ex.y == label {
                    out[i] = next % k;
                    next += 1;
                }
            }
        }
    } else {
        for (i, f) in out.iter_mut().enumerate() {
            *f = i % k;
        }
    }
    out
}

/// Trains with `trainer` for one radius; the exact solver starts from `warm`.
fn fit_one(
    support: &SupportSet,
    cfg: &CvConfig,
    delta: f64,
    warm: Option<&DualIterate>,
) -> Result<(DualIterate, TrainedModel)> {
    let eps = cfg
        .epsilon
        .unwrap_or_else(|| SmoothingConfig::default_epsilon(support.len()));
    let smoothing = SmoothingConfig::new(eps, delta)?;
    match &cfg.trainer {
        Trainer::Exact(ec) => {
            let pb = DroProblem::new(support, cfg.tc, cfg.loss, smoothing)?;
            let start = warm
                .cloned()
                .unwrap_or_else(|| DualIterate::zeros(pb.dim(), 1.0));
            let run = exact_minimize(&pb, start, ec);
            let it = run.iterate.clone();
            Ok((it, exact_model(support, &pb, run, ec)))
        }
        Trainer::Sgd(sc) => {
            let m = sgd_train(support, cfg.tc, cfg.loss, smoothing, sc)?;
            Ok((DualIterate::new(m.beta.clone(), m.lambda), m))
        }
    }
}

/// Trains on `labeled` plus `unlabeled` for a single radius with the CV
/// trainer settings (used to refit after selection).
pub fn train_with(
    labeled: &[LabeledExample],
    unlabeled: &[UnlabeledExample],
    delta: f64,
    cfg: &CvConfig,
) -> Result<TrainedModel> {
    let support = build_support(labeled, unlabeled)?;
    fit_one(&support, cfg, delta, None).map(|(_, m)| m)
}

/// k-fold cross-validation of the radius on the labeled data. Every fold's
/// support also contains the full unlabeled set. Returns the smallest radius
/// whose mean score is within one standard error of the best.
pub fn cross_validate_delta(
    labeled: &[LabeledExample],
    unlabeled: &[UnlabeledExample],
    grid: &[f64],
    cfg: &CvConfig,
) -> Result<CvResult> {
    if cfg.folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty radius grid"));
    }
    if grid.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
        return Err(Error::invalid("radii must be nonnegative and finite"));
    }
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let assign = fold_assignment(labeled, cfg.folds);
    for fold in 0..cfg.folds {
        let size = assign.iter().filter(|&&f| f == fold).count();
        if size == 0 || size == labeled.len() {
            return Err(Error::FoldTooSmall { fold, size });
        }
    }
    let mut scores = vec![Vec::with_capacity(cfg.folds); grid.len()];
    for fold in 0..cfg.folds {
        let train: Vec<LabeledExample> = labeled
            .iter()
            .zip(&assign)
            .filter(|(_, &f)| f != fold)
            .map(|(ex, _)| ex.clone())
            .collect();
        let valid: Vec<LabeledExample> = labeled
            .iter()
            .zip(&assign)
            .filter(|(_, &f)| f == fold)
            .map(|(ex, _)| ex.clone())
            .collect();
        let support = build_support(&train, unlabeled)?;
        let mut warm: Option<DualIterate> = None;
        for (g, &delta) in grid.iter().enumerate() {
            let (it, model) = fit_one(&support, cfg, delta, warm.as_ref())?;
            warm = Some(it);
            let s = match cfg.metric {
                CvMetric::Loss => mean_loss(cfg.loss, &model.beta, &valid),
                CvMetric::Accuracy => accuracy(&model.beta, &valid),
            };
            scores[g].push(s);
        }
    }
    let table: Vec<CvRow> = grid
        .iter()
        .zip(scores)
        .map(|(&delta, fold_scores)| CvRow {
            delta,
            mean: crate::stats::mean(&fold_scores),
            std_error: crate::stats::std_error(&fold_scores),
            fold_scores,
        })
        .collect();
    // Orient so that lower is better.
    let sign = match cfg.metric {
        CvMetric::Loss => 1.0,
        CvMetric::Accuracy => -1.0,
    };
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if sign * row.mean < sign * table[best].mean {
            best = i;
        }
    }
    let threshold = sign * table[best].mean + table[best].std_error;
    let delta_best = table
        .iter()
        .find(|row| sign * row.mean <= threshold)
        .map_or(table[best].delta, |row| row.delta);
    Ok(CvResult { delta_best, table })
}

/// Euclidean projection onto `{v : ||v||_1 <= r}`.
fn project_l1_ball(v: &[f64], r: f64) -> Vec<f64> {
    if v.iter().map(|x| x.abs()).sum::<f64>() <= r {
        return v.to_vec();
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - r) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter()
        .map(|x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// `prox_{t ||.||_p}(v)` for `p` in `{1, 2, inf}`.
pub fn prox_norm(v: &[f64], t: f64, p: f64) -> Vec<f64> {
    if p == 1.0 {
        v.iter()
            .map(|x| x.signum() * (x.abs() - t).max(0.0))
            .collect()
    } else if p == 2.0 {
        let n = norm2(v);
        let f = if n > t { 1.0 - t / n } else { 0.0 };
        v.iter().map(|x| f * x).collect()
    } else {
        // Moreau: v minus its projection onto the dual (l1) ball.
        let proj = project_l1_ball(v, t);
        v.iter().zip(&proj).map(|(a, b)| a - b).collect()
    }
}

/// `||beta||_p` for `p` in `[1, inf]`.
pub fn penalty_norm(beta: &[f64], p: f64) -> f64 {
    crate::linalg::lp_norm(beta, p)
}

fn logistic_risk_grad(data: &[LabeledExample], beta: &[f64]) -> (f64, Vec<f64>) {
    let n = data.len() as f64;
    let mut g = vec![0.0; beta.len()];
    let mut f = 0.0;
    for ex in data {
        let z = dot(beta, &ex.x);
        f += Loss::Logistic.of_margin(z, ex.y);
        axpy(Loss::Logistic.dz(z, ex.y) / n, &ex.x, &mut g);
    }
    (f / n, g)
}

/// Minimizes `E_{P_n}[log(1 + exp(-Y beta^T X))] + delta_bar ||beta||_p` by
/// accelerated proximal gradient with backtracking and adaptive restart.
pub fn regularized_logistic_baseline(
    labeled: &[LabeledExample],
    delta_bar: f64,
    p: f64,
) -> Result<TrainedModel> {
    if !(p == 1.0 || p == 2.0 || p == f64::INFINITY) {
        return Err(Error::invalid("penalty norm must be 1, 2 or inf"));
    }
    if !(delta_bar >= 0.0 && delta_bar.is_finite()) {
        return Err(Error::invalid(
            "penalty weight must be nonnegative and finite",
        ));
    }
    let d = crate::data::check_labeled(labeled, true)?;
    let objective = |b: &[f64]| logistic_risk_grad(labeled, b).0 + delta_bar * penalty_norm(b, p);
    // Lipschitz bound 0.25 * max eigenvalue of X^T X / n <= 0.25 * mean ||x||^2.
    let mut lip =
        0.25 * labeled.iter().map(|ex| dot(&ex.x, &ex.x)).sum::<f64>() / labeled.len() as f64;
    lip = lip.max(1e-12);
    let max_iter = 1_000_000;
    let mut beta = vec![0.0; d];
    let mut y = beta.clone();
    let mut t = 1.0;
    let mut f_prev = objective(&beta);
    let mut trace = vec![f_prev];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let (fy, gy) = logistic_risk_grad(labeled, &y);
        // Backtracking on the smooth part.
        let next = loop {
            let step: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / lip).collect();
            let cand = prox_norm(&step, delta_bar / lip, p);
            let diff: Vec<f64> = cand.iter().zip(&y).map(|(a, b)| a - b).collect();
            let fc = logistic_risk_grad(labeled, &cand).0;
            if fc <= fy + dot(&gy, &diff) + 0.5 * lip * dot(&diff, &diff) + 1e-15 * fy.abs() {
                break cand;
            }
            lip *= 2.0;
        };
        let f_next = objective(&next);
        // Norm of the gradient mapping at y.
        let mapping = lip
            * next
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        if mapping <= 1e-8 {
            if f_next <= f_prev {
                beta = next;
                trace.push(f_next);
            }
            converged = true;
            break;
        }
        if f_next > f_prev {
            // Restart momentum.
            y = beta.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        t = t_next;
        beta = next;
        trace.push(f_next);
        f_prev = f_next;
    }
    Ok(TrainedModel {
        beta,
        lambda: 0.0,
        delta_star: 0.0,
        epsilon: 0.0,
        loss: Loss::Logistic,
        method: TrainMethod::Baseline { delta_bar, p },
        trace,
        iterations,
        converged,
        fingerprint: crate::data::fingerprint(labeled, &[]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::dual_value;
    use rand_distr::{Distribution, StandardNormal};

    fn logistic_data(n: usize, d: usize, seed: u64) -> Vec<LabeledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..d)
            .map(|k| if k % 2 == 0 { 1.0 } else { -0.5 })
            .collect();
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let p = crate::loss::sigmoid(dot(&truth, &x));
                let y = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
                LabeledExample::new(x, y)
            })
            .collect()
    }

    #[test]
    fn step_schedule() {
        let c = SgdConfig::default();
        assert_eq!(c.step(0), 0.1);
        assert_eq!(c.step(10), 0.05);
    }

    #[test]
    fn l1_ball_projection() {
        let p = project_l1_ball(&[3.0, -1.0, 0.5], 2.0);
        assert!((p.iter().map(|x| x.abs()).sum::<f64>() - 2.0).abs() < 1e-14);
        assert_eq!(p, vec![2.0, 0.0, 0.0]);
        assert_eq!(project_l1_ball(&[0.2, -0.3], 1.0), vec![0.2, -0.3]);
    }

    #[test]
    fn prox_satisfies_optimality() {
        // prox(v) = argmin_x t||x||_p + 0.5||x - v||^2; compare against perturbations.
        let v = [1.3, -0.4, 0.05, 2.2];
        for p in [1.0, 2.0, f64::INFINITY] {
            let x = prox_norm(&v, 0.7, p);
            let f = |z: &[f64]| {
                0.7 * penalty_norm(z, p)
                    + 0.5
                        * z.iter()
                            .zip(&v)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
            };
            let fx = f(&x);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..500 {
                let z: Vec<f64> = x
                    .iter()
                    .map(|a| a + rng.random_range(-0.05..0.05))
                    .collect();
                assert!(f(&z) >= fx - 1e-12, "p={p}");
            }
        }
    }

    #[test]
    fn baseline_with_huge_penalty_is_zero() {
        let data = logistic_data(30, 3, 2);
        for p in [1.0, 2.0, f64::INFINITY] {
            let m = regularized_logistic_baseline(&data, 1e3, p).unwrap();
            assert!(norm2(&m.beta) < 1e-12);
            assert!(
                (mean_loss(Loss::Logistic, &m.beta, &data) - core::f64::consts::LN_2).abs() < 1e-12
            );
        }
    }

    #[test]
    fn baseline_l1_matches_coordinate_descent() {
        let data = logistic_data(60, 4, 3);
        let delta_bar = 0.03;
        let m = regularized_logistic_baseline(&data, delta_bar, 1.0).unwrap();
        assert!(m.converged);
        // Independent oracle: cyclic coordinate descent, each coordinate solved
        // by bisection on its subgradient optimality condition.
        let mut b = vec![0.0; 4];
        for _ in 0..400 {
            for k in 0..4 {
                let partial = |t: f64, b: &mut Vec<f64>| {
                    b[k] = t;
                    logistic_risk_grad(&data, b).1[k]
                };
                let g0 = partial(0.0, &mut b);
                if g0.abs() <= delta_bar {
                    b[k] = 0.0;
                    continue;
                }
                let target = if g0 > 0.0 { delta_bar } else { -delta_bar };
                let (mut lo, mut hi) = if g0 > 0.0 { (-50.0, 0.0) } else { (0.0, 50.0) };
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if partial(mid, &mut b) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                b[k] = 0.5 * (lo + hi);
            }
        }
        let f = |beta: &[f64]| {
            mean_loss(Loss::Logistic, beta, &data) + delta_bar * penalty_norm(beta, 1.0)
        };
        assert!(
            (f(&m.beta) - f(&b)).abs() < 1e-6,
            "{} vs {}",
            f(&m.beta),
            f(&b)
        );
    }

    #[test]
    fn fold_assignment_is_stratified() {
        let data: Vec<LabeledExample> = (0..10)
            .map(|i| LabeledExample::new(vec![i as f64], if i < 4 { 1.0 } else { -1.0 }))
            .collect();
        let a = fold_assignment(&data, 3);
        for f in 0..3 {
            let pos = (0..4).filter(|&i| a[i] == f).count();
            assert!(pos >= 1);
        }
        let sizes: Vec<usize> = (0..3)
            .map(|f| a.iter().filter(|&&x| x == f).count())
            .collect();
        assert_eq!(sizes, vec![4, 3, 3]);
    }

    #[test]
    fn dual_value_monotone_in_radius() {
        let data = logistic_data(4, 2, 5);
        let unl = [UnlabeledExample::new(vec![0.3, -0.2])];
        let s = build_support(&data, &unl).unwrap();
        let tc = TransportCost::squared_euclidean();
        let beta = [0.4, -1.1];
        let mut prev = f64::NEG_INFINITY;
        for delta in [0.0, 0.01, 0.1, 0.5, 2.0] {
            let v = dual_value(&s, &beta, delta, &tc, Loss::Logistic)
                .unwrap()
                .value;
            assert!(v >= prev - 1e-9);
            prev = v;
        }
    }

    #[test]
    fn exact_train_dominates_erm_and_is_stationary() {
        let data = logistic_data(12, 2, 6);
        let unl: Vec<UnlabeledExample> = logistic_data(6, 2, 7)
            .into_iter()
            .map(|ex| UnlabeledExample::new(ex.x))
            .collect();
        let s = build_support(&data, &unl).unwrap();
        let tc = TransportCost::squared_euclidean();
        let sm = SmoothingConfig::with_default_epsilon(s.len(), 0.1).unwrap();
        let m = exact_train(&s, tc, Loss::Logistic, sm, &ExactConfig::default()).unwrap();
        assert!(m.converged && m.lambda >= 0.0);
        let pb = DroProblem::new(&s, tc, Loss::Logistic, sm).unwrap();
        let obj = pb.objective(&DualIterate::new(m.beta.clone(), m.lambda));
        assert!(obj >= pb.empirical_risk(&m.beta));
    }

    #[test]
    fn sgd_is_deterministic() {
        let data = logistic_data(8, 2, 8);
        let s = build_support(&data, &[UnlabeledExample::new(vec![0.0, 1.0])]).unwrap();
        let tc = TransportCost::squared_euclidean();
        let sm = SmoothingConfig::with_default_epsilon(s.len(), 0.05).unwrap();
        let cfg = SgdConfig {
            iterations: 500,
            seed: 3,
            ..SgdConfig::default()
        };
        let a = sgd_train(&s, tc, Loss::Logistic, sm, &cfg).unwrap();
        let b = sgd_train(&s, tc, Loss::Logistic, sm, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
