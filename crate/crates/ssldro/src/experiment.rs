//! Multi-seed experiment drivers. Seeds or replications run in parallel on
//! the rayon pool; results are always returned in seed order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use ssldro_core::data::{
    split, with_intercept, LabeledExample, SplitSizes, Standardizer, UnlabeledExample,
};
use ssldro_core::loss::Loss;
use ssldro_core::rwp::{
    rate_exponent, rwp_solve, D1Moments, GaussianDensity, GaussianLinearModel, LimitPool,
};
use ssldro_core::solver::{
    accuracy, cross_validate_delta, mean_loss, train_with, CvConfig, CvMetric, ExactConfig, Trainer,
};
use ssldro_core::stats::{mean, median, ols_slope, quantile, sample_std};
use ssldro_core::transport::TransportCost;
use ssldro_core::Result;

/// `chi^2_1` quantile at 0.95.
pub const CHI2_1_Q95: f64 = 3.841_458_820_694_124;

/// An independent random stream per replication, derived from one seed.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Standardization fitted on labeled + unlabeled predictors, then an
/// intercept column, applied to all three partitions.
pub fn preprocess(
    standardizer: Option<&Standardizer>,
    intercept: bool,
    labeled: &[LabeledExample],
    unlabeled: &[UnlabeledExample],
    test: &[LabeledExample],
) -> (
    Vec<LabeledExample>,
    Vec<UnlabeledExample>,
    Vec<LabeledExample>,
) {
    let tf = |x: &[f64]| {
        let z = standardizer.map_or_else(|| x.to_vec(), |s| s.apply(x));
        if intercept {
            with_intercept(&z)
        } else {
            z
        }
    };
    let lab = |d: &[LabeledExample]| {
        d.iter()
            .map(|ex| LabeledExample::new(tf(&ex.x), ex.y))
            .collect()
    };
    (
        lab(labeled),
        unlabeled
            .iter()
            .map(|ex| UnlabeledExample::new(tf(&ex.x)))
            .collect(),
        lab(test),
    )
}

/// Projected-gradient tolerance for the many fits of a Table 1 run; test
/// metrics move by about 1e-3 relative to a 1e-6 solve.
pub const TABLE1_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Config {
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub first_seed: u64,
    pub seeds: usize,
    pub grid: Vec<f64>,
    pub folds: usize,
    pub metric: CvMetric,
    pub trainer: Trainer,
    pub tc: TransportCost,
    pub standardize: bool,
    pub intercept: bool,
}

impl Default for Table1Config {
    fn default() -> Self {
        Table1Config {
            labeled: 40,
            unlabeled: 200,
            test: 329,
            first_seed: 0,
            seeds: 200,
            grid: vec![0.0, 0.1, 0.3, 1.0, 3.0, 10.0],
            folds: 5,
            metric: CvMetric::Loss,
            trainer: Trainer::Exact(ExactConfig {
                tolerance: TABLE1_TOLERANCE,
                ..ExactConfig::default()
            }),
            tc: TransportCost::squared_euclidean(),
            standardize: true,
            intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub delta: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Summary {
    pub train_loss_mean: f64,
    pub train_loss_sd: f64,
    pub test_loss_mean: f64,
    pub test_loss_sd: f64,
    pub test_accuracy_mean: f64,
    pub test_accuracy_sd: f64,
    pub runs: Vec<SeedOutcome>,
}

/// One split: select the radius by CV on the labeled part, refit on all
/// labeled data, evaluate on the test part.
pub fn table1_seed(data: &[LabeledExample], cfg: &Table1Config, seed: u64) -> Result<SeedOutcome> {
    let parts = split(
        data,
        SplitSizes::Counts {
            labeled: cfg.labeled,
            unlabeled: cfg.unlabeled,
            test: cfg.test,
        },
        seed,
    )?;
    let st = if cfg.standardize {
        Some(Standardizer::fit(
            parts
                .labeled
                .iter()
                .map(|ex| ex.x.as_slice())
                .chain(parts.unlabeled.iter().map(|ex| ex.x.as_slice())),
        )?)
    } else {
        None
    };
    let (labeled, unlabeled, test) = preprocess(
        st.as_ref(),
        cfg.intercept,
        &parts.labeled,
        &parts.unlabeled,
        &parts.test,
    );
    let cv = CvConfig {
        folds: cfg.folds,
        metric: cfg.metric,
        trainer: cfg.trainer.clone(),
        tc: cfg.tc,
        loss: Loss::Logistic,
        epsilon: None,
    };
    let sel = cross_validate_delta(&labeled, &unlabeled, &cfg.grid, &cv)?;
    let model = train_with(&labeled, &unlabeled, sel.delta_best, &cv)?;
    Ok(SeedOutcome {
        seed,
        delta: sel.delta_best,
        train_loss: mean_loss(Loss::Logistic, &model.beta, &labeled),
        test_loss: mean_loss(Loss::Logistic, &model.beta, &test),
        test_accuracy: accuracy(&model.beta, &test),
    })
}

pub fn table1(data: &[LabeledExample], cfg: &Table1Config) -> Result<Table1Summary> {
    let runs = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|i| table1_seed(data, cfg, cfg.first_seed + i))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&SeedOutcome) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let (tr, te, acc) = (
        col(|r| r.train_loss),
        col(|r| r.test_loss),
        col(|r| r.test_accuracy),
    );
    Ok(Table1Summary {
        train_loss_mean: mean(&tr),
        train_loss_sd: sample_std(&tr),
        test_loss_mean: mean(&te),
        test_loss_sd: sample_std(&te),
        test_accuracy_mean: mean(&acc),
        test_accuracy_sd: sample_std(&acc),
        runs,
    })
}

/// `X ~ N(0, I_d)`, `e ~ N(0, 1)`, `beta* = (1, 0, ..., 0)`.
pub fn standard_linear_model(d: usize) -> GaussianLinearModel {
    let mut beta_star = vec![0.0; d];
    beta_star[0] = 1.0;
    GaussianLinearModel {
        beta_star,
        noise_sd: 1.0,
    }
}

/// One simulated RWP statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RwpReplication {
    pub value: f64,
    /// `n^rate * value`.
    pub scaled: f64,
    /// Plug-in `kappa_1` (one-dimensional models only).
    pub kappa: Option<f64>,
}

/// `reps` independent instances of size `n` with `gamma n` predictors.
pub fn simulate_rwp(
    model: &GaussianLinearModel,
    n: usize,
    gamma: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<RwpReplication>> {
    let d = model.beta_star.len();
    let scale = (n as f64).powf(rate_exponent(d));
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(seed, r);
            let inst = model.instance(n, gamma, &mut rng)?;
            let value = rwp_solve(&inst, 1e-11)?.value;
            let kappa = if d == 1 {
                Some(D1Moments::plug_in(inst.labeled(), model.beta_star[0])?.kappa())
            } else {
                None
            };
            Ok(RwpReplication {
                value,
                scaled: scale * value,
                kappa,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct D1Check {
    pub n: usize,
    pub reps: usize,
    pub empirical_q95: f64,
    pub kappa: f64,
    pub limit_q95: f64,
    pub relative_error: f64,
}

/// Compares the 95% quantile of `n R_n` against `kappa_1 chi^2_1`, with
/// `kappa_1` the average plug-in estimate over replications.
pub fn theorem1_d1(n: usize, reps: usize, seed: u64) -> Result<D1Check> {
    let sims = simulate_rwp(&standard_linear_model(1), n, 1.0, reps, seed)?;
    let scaled: Vec<f64> = sims.iter().map(|s| s.scaled).collect();
    let kappa = mean(&sims.iter().filter_map(|s| s.kappa).collect::<Vec<_>>());
    let empirical_q95 = quantile(&scaled, 0.95);
    let limit_q95 = kappa * CHI2_1_Q95;
    Ok(D1Check {
        n,
        reps,
        empirical_q95,
        kappa,
        limit_q95,
        relative_error: (empirical_q95 - limit_q95).abs() / limit_q95,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub median: f64,
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub d: usize,
    pub exponent: f64,
    pub rows: Vec<RateRow>,
    /// Slope of log median against log n.
    pub slope: f64,
    pub limit_q90: f64,
    pub limit_min: f64,
    /// `|limit_q90 - q90(largest n)| / q90(largest n)`.
    pub q90_relative_error: f64,
}

/// Scaled RWP statistics over a ladder of sample sizes, plus the limit law
/// sampled from a pool of `pool` model draws.
pub fn theorem1_rate(
    d: usize,
    ns: &[usize],
    reps: usize,
    pool: usize,
    limit_draws: usize,
    seed: u64,
) -> Result<RateCheck> {
    let model = standard_linear_model(d);
    let mut rows = Vec::with_capacity(ns.len());
    for (k, &n) in ns.iter().enumerate() {
        let sims = simulate_rwp(&model, n, 1.0, reps, seed.wrapping_add(k as u64))?;
        let scaled: Vec<f64> = sims.iter().map(|s| s.scaled).collect();
        rows.push(RateRow {
            n,
            median: median(&scaled),
            q90: quantile(&scaled, 0.9),
        });
    }
    let logn: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let logm: Vec<f64> = rows.iter().map(|r| r.median.ln()).collect();
    let slope = ols_slope(&logn, &logm);

    let mut rng = replication_rng(seed, u64::MAX);
    let density = GaussianDensity::standard(d);
    let lp = LimitPool::from_sampler(
        pool,
        |r| model.draw(r),
        &model.beta_star,
        1.0,
        &density,
        &mut rng,
    )?;
    let limit: Vec<f64> = (0..limit_draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = replication_rng(seed ^ 0x5eed, i);
            lp.sample(&mut r).map(|s| s.value)
        })
        .collect::<Result<_>>()?;
    let limit_q90 = quantile(&limit, 0.9);
    let last = rows.last().map_or(f64::NAN, |r| r.q90);
    Ok(RateCheck {
        d,
        exponent: rate_exponent(d),
        rows,
        slope,
        limit_q90,
        limit_min: limit.iter().copied().fold(f64::INFINITY, f64::min),
        q90_relative_error: (limit_q90 - last).abs() / last,
    })
}
