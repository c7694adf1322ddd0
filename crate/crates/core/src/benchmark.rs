//! Repeated-training accuracy and stability harness.
//!
//! A trial trains one discriminator from its own seed and scores it on fresh
//! test batches. Trials are pooled per `(estimator, d, SNR)` cell into a
//! [`StatsReport`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{closed_form_awgn_mi, snr_db_to_sigma2, ChannelSpec, SampleBatch};
use crate::estimators::{estimate, training_objective, DiscriminatorOutputs, EstimatorKind, MineEma};
use crate::ksg::{ksg_estimate, KsgConfig};
use crate::nn::{AdamConfig, Mlp, MlpSpec, Mode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub train_iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub n_estimators: usize,
    pub n_test_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 10 estimators, 100 test batches.
    pub fn desk() -> Self {
        Self {
            batch_size: 512,
            train_iterations: 10_000,
            learning_rate: 0.002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            n_estimators: 10,
            n_test_batches: 100,
        }
    }

    /// 100 estimators, 1000 test batches.
    pub fn full() -> Self {
        Self {
            n_estimators: 100,
            n_test_batches: 1000,
            ..Self::desk()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.train_iterations == 0 || self.n_estimators == 0 || self.n_test_batches == 0 {
            return Err(Error::InvalidConfig(
                "batch_size >= 2 and positive iteration, estimator and test-batch counts required".into(),
            ));
        }
        self.adam().validate()
    }
}

/// What a benchmark cell runs: a neural estimator or KSG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Neural(EstimatorKind),
    Ksg(KsgConfig),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Neural(kind) => kind.label(),
            Method::Ksg(cfg) => format!("ksg(k={})", cfg.k),
        }
    }
}

/// A trained discriminator. `failed_at` is the iteration whose loss or
/// gradient went non-finite; a failed model outputs non-finite values for
/// every input.
#[derive(Debug, Clone)]
pub struct TrainedEstimator {
    pub kind: EstimatorKind,
    pub model: Mlp<f32>,
    pub failed_at: Option<usize>,
}

impl TrainedEstimator {
    pub fn is_failed(&self) -> bool {
        self.model.is_failed()
    }

    /// Per-batch estimate in f32 arithmetic, as used during training.
    pub fn estimate_batch(&self, model: &mut Mlp<f32>, batch: &SampleBatch<f32>) -> Result<f64> {
        if model.is_failed() {
            return Ok(f64::NAN);
        }
        let (out, _) = model.forward(batch.stacked_inputs().view(), Mode::Eval)?;
        let outs = DiscriminatorOutputs::from_stacked(out.view())?;
        Ok(f64::from(estimate(&self.kind, &outs)))
    }
}

/// Trains one discriminator on fresh Gaussian-source AWGN batches.
///
/// A non-finite loss or gradient ends training and marks the model failed;
/// that is an outcome, not an error.
pub fn train_estimator(
    cfg: &TrainConfig,
    kind: &EstimatorKind,
    ch: &ChannelSpec,
    seed: u64,
) -> Result<TrainedEstimator> {
    cfg.validate()?;
    kind.validate()?;
    ch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Mlp::<f32>::new(MlpSpec::discriminator(2 * ch.d, kind.head()), rng.gen())?;
    let adam = cfg.adam();
    let mut ema = MineEma::default();
    let mut failed_at = None;
    for it in 0..cfg.train_iterations {
        let batch = SampleBatch::<f32>::gaussian(ch, cfg.batch_size, &mut rng)?;
        let (out, cache) = model.forward(batch.stacked_inputs().view(), Mode::Train(&mut rng))?;
        let outs = DiscriminatorOutputs::from_stacked(out.view())?;
        let obj = training_objective(kind, &outs, &mut ema);
        if !obj.is_finite() {
            model.mark_failed();
            failed_at = Some(it);
            break;
        }
        let (grads, _) = model.backward(&cache, obj.stacked_grads().view())?;
        match model.adam_step(&grads, &adam) {
            Ok(()) => {}
            Err(Error::NonFinite(_)) | Err(Error::ModelFailed) => {
                failed_at = Some(it);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainedEstimator {
        kind: *kind,
        model,
        failed_at,
    })
}

/// Result of one trial. `None` marks a batch whose estimate was non-finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TrialOutcome {
    Valid { estimates: Vec<Option<f64>> },
    TrainFailure { n_batches: usize },
}

impl TrialOutcome {
    pub fn n_batches(&self) -> usize {
        match self {
            TrialOutcome::Valid { estimates } => estimates.len(),
            TrialOutcome::TrainFailure { n_batches } => *n_batches,
        }
    }

    pub fn failed_batches(&self) -> usize {
        match self {
            TrialOutcome::Valid { estimates } => estimates.iter().filter(|e| e.is_none()).count(),
            TrialOutcome::TrainFailure { n_batches } => *n_batches,
        }
    }

    fn classify(estimates: Vec<Option<f64>>) -> Self {
        if estimates.iter().all(Option::is_none) {
            TrialOutcome::TrainFailure {
                n_batches: estimates.len(),
            }
        } else {
            TrialOutcome::Valid { estimates }
        }
    }
}

fn check_batches(n_batches: usize, batch_size: usize) -> Result<()> {
    if n_batches == 0 || batch_size < 2 {
        return Err(Error::InvalidInput(
            "need at least one test batch of two or more samples".into(),
        ));
    }
    Ok(())
}

/// Scores a trained estimator on `n_batches` fresh batches.
pub fn evaluate(
    trained: &TrainedEstimator,
    ch: &ChannelSpec,
    n_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<TrialOutcome> {
    check_batches(n_batches, batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = trained.model.clone();
    let mut estimates = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let batch = SampleBatch::<f32>::gaussian(ch, batch_size, &mut rng)?;
        let v = trained.estimate_batch(&mut model, &batch)?;
        estimates.push(v.is_finite().then_some(v));
    }
    Ok(TrialOutcome::classify(estimates))
}

/// KSG on `n_batches` fresh batches; no training involved.
pub fn evaluate_ksg(
    cfg: &KsgConfig,
    ch: &ChannelSpec,
    n_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<TrialOutcome> {
    check_batches(n_batches, batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let batch = SampleBatch::<f64>::gaussian(ch, batch_size, &mut rng)?;
        let v = ksg_estimate(batch.x.view(), batch.y_joint.view(), cfg)?;
        estimates.push(v.is_finite().then_some(v));
    }
    Ok(TrialOutcome::classify(estimates))
}

/// Pooled statistics for one cell. Statistics are `None` when every trial failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub estimator: String,
    pub d: usize,
    pub snr_db: f64,
    pub truth: f64,
    pub mean_estimate: Option<f64>,
    pub bias: Option<f64>,
    /// Population variance (divide by N).
    pub variance: Option<f64>,
    pub rmse: Option<f64>,
    pub r_e: f64,
    pub r_s: f64,
    pub n_valid_estimators: usize,
}

/// Pools the finite batch estimates of all non-failed trials.
///
/// `r_e` is the fraction of trials that are `TrainFailure`; `r_s` the fraction
/// of all batches (failed trials included) without a finite estimate.
pub fn aggregate(
    estimator: &str,
    d: usize,
    snr_db: f64,
    outcomes: &[TrialOutcome],
    truth: f64,
) -> Result<StatsReport> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no trial outcomes to aggregate".into()));
    }
    let pooled: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o {
            TrialOutcome::Valid { estimates } => Some(estimates.iter().flatten().copied()),
            TrialOutcome::TrainFailure { .. } => None,
        })
        .flatten()
        .collect();
    let n_failed = outcomes
        .iter()
        .filter(|o| matches!(o, TrialOutcome::TrainFailure { .. }))
        .count();
    let total_batches: usize = outcomes.iter().map(TrialOutcome::n_batches).sum();
    let failed_batches: usize = outcomes.iter().map(TrialOutcome::failed_batches).sum();

    let (mean_estimate, bias, variance, rmse) = if pooled.is_empty() {
        (None, None, None, None)
    } else {
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let var = pooled.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let mse = pooled.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
        (Some(mean), Some(mean - truth), Some(var), Some(mse.sqrt()))
    };
    Ok(StatsReport {
        estimator: estimator.to_string(),
        d,
        snr_db,
        truth,
        mean_estimate,
        bias,
        variance,
        rmse,
        r_e: n_failed as f64 / outcomes.len() as f64,
        r_s: if total_batches == 0 {
            0.0
        } else {
            failed_batches as f64 / total_batches as f64
        },
        n_valid_estimators: outcomes.len() - n_failed,
    })
}

/// Cells are the cartesian product `methods x dims x snrs_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub methods: Vec<Method>,
    pub dims: Vec<usize>,
    pub snrs_db: Vec<f64>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(Method, usize, f64)> {
        let mut out = Vec::new();
        for m in &self.methods {
            for &d in &self.dims {
                for &s in &self.snrs_db {
                    out.push((*m, d, s));
                }
            }
        }
        out
    }
}

/// Report plus the raw per-trial outcomes of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub report: StatsReport,
    pub trials: Vec<TrialOutcome>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for a path of indices under a master seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// One trial of a cell: train (neural only) then evaluate, with seeds derived
/// from `trial_seed`.
pub fn run_trial(cfg: &TrainConfig, method: &Method, ch: &ChannelSpec, trial_seed: u64) -> Result<TrialOutcome> {
    let eval_seed = derive_seed(trial_seed, &[1]);
    match method {
        Method::Neural(kind) => {
            let trained = train_estimator(cfg, kind, ch, derive_seed(trial_seed, &[0]))?;
            evaluate(&trained, ch, cfg.n_test_batches, cfg.batch_size, eval_seed)
        }
        Method::Ksg(k) => evaluate_ksg(k, ch, cfg.n_test_batches, cfg.batch_size, eval_seed),
    }
}

/// Runs every cell of the grid. Trials run in parallel; results depend only
/// on the master seed.
pub fn sweep(grid: &SweepGrid, cfg: &TrainConfig, master_seed: u64) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::InvalidConfig("empty benchmark grid".into()));
    }
    let mut tasks = Vec::new();
    for (ci, (method, d, snr)) in cells.iter().enumerate() {
        if let Method::Neural(kind) = method {
            kind.validate()?;
        }
        let ch = ChannelSpec::continuous(*d, snr_db_to_sigma2(*snr))?;
        for t in 0..cfg.n_estimators {
            tasks.push((ci, *method, ch.clone(), derive_seed(master_seed, &[ci as u64, t as u64])));
        }
    }
    let outcomes: Vec<(usize, TrialOutcome)> = tasks
        .into_par_iter()
        .map(|(ci, method, ch, seed)| run_trial(cfg, &method, &ch, seed).map(|o| (ci, o)))
        .collect::<Result<_>>()?;
    cells
        .iter()
        .enumerate()
        .map(|(ci, (method, d, snr))| {
            let trials: Vec<TrialOutcome> = outcomes
                .iter()
                .filter(|(c, _)| *c == ci)
                .map(|(_, o)| o.clone())
                .collect();
            let truth = closed_form_awgn_mi(*d, snr_db_to_sigma2(*snr));
            let report = aggregate(&method.label(), *d, *snr, &trials, truth)?;
            Ok(CellResult { report, trials })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "estimator,d,snr_db,truth_nats,mean,bias,variance,rmse,r_e,r_s,n_valid";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV rows under [`REPORT_HEADER`]. `scale` multiplies the estimate
/// columns (1 for nats, `1/ln 2` for bits); variance scales by `scale^2` and
/// `truth_nats` stays in nats. Empty fields mean every trial failed.
pub fn reports_to_csv(reports: &[StatsReport], scale: f64) -> String {
    let opt = |v: Option<f64>, s: f64| v.map_or(String::new(), |x| format!("{}", x * s));
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&r.estimator),
            r.d,
            r.snr_db,
            r.truth,
            opt(r.mean_estimate, scale),
            opt(r.bias, scale),
            opt(r.variance, scale * scale),
            opt(r.rmse, scale),
            r.r_e,
            r.r_s,
            r.n_valid_estimators
        ));
    }
    out
}
