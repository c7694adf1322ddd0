//! Cooperative capacity learning over an AWGN channel.
//!
//! A generator maps source symbols to channel inputs; a discriminator
//! estimates `I(X; Y)` with one of the neural estimators. The discriminator
//! takes `disc_iters_per_gen_iter` steps on its own objective, then the
//! generator takes one step that raises the discriminator's estimate, with
//! gradients flowing through `y = x + n` for fixed noise draws.
//!
//! Learned codebooks are checked with [`supportive_mi`], a Monte-Carlo
//! `h(Y) - h(N)` using the exact Gaussian-mixture density of `Y`.

use std::f64::consts::{E, PI};
use std::fmt::Write as _;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channels::{
    all_bit_patterns, awgn_noise, sample_discrete_source, sample_gaussian_source, ChannelSpec, Codebook,
    InputMode, SampleBatch,
};
use crate::estimators::{
    estimate, estimate_objective, renyi_capacity_lb, training_objective, DiscriminatorOutputs, EstimatorKind,
    MineEma,
};
use crate::nn::{AdamConfig, Mlp, MlpSpec, Mode, ParamGrads};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoopConfig {
    pub disc_iters_per_gen_iter: usize,
    pub total_disc_iters: usize,
    pub gen_learning_rate: f64,
    pub disc_learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub estimator: EstimatorKind,
    /// Trailing discriminator iterations averaged into the final estimate.
    pub final_window: usize,
    /// Monte-Carlo samples for the supportive estimate.
    pub n_mc: usize,
}

impl Default for CoopConfig {
    fn default() -> Self {
        Self {
            disc_iters_per_gen_iter: 25,
            total_disc_iters: 10_000,
            gen_learning_rate: 1e-4,
            disc_learning_rate: 2e-3,
            batch_size: 512,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            estimator: EstimatorKind::Mmie,
            final_window: 100,
            n_mc: 100_000,
        }
    }
}

impl CoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.disc_iters_per_gen_iter == 0
            || self.total_disc_iters == 0
            || self.batch_size < 2
            || self.final_window == 0
        {
            return Err(Error::InvalidConfig(
                "iteration counts and final_window must be positive, batch_size >= 2".into(),
            ));
        }
        if self.n_mc < MIN_MC_SAMPLES {
            return Err(Error::InvalidConfig(format!("n_mc must be >= {MIN_MC_SAMPLES}")));
        }
        self.estimator.validate()?;
        self.adam(self.gen_learning_rate).validate()?;
        self.adam(self.disc_learning_rate).validate()
    }

    fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    /// Discriminator training loss on the batch.
    pub j_value: f64,
    pub i_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    /// Mean eval-mode discriminator estimate over the final window.
    pub capacity_estimate: f64,
    /// Discrete mode only: Monte-Carlo MI of the normalised learned codebook.
    pub supportive_estimate: Option<f64>,
    /// Discrete mode only: SNR of the codebook before normalisation.
    pub effective_snr_db: Option<f64>,
    pub codebook: Option<Codebook>,
    /// MMIE and alpha-MMIE only.
    pub renyi_capacity_estimate: Option<f64>,
    pub valid: bool,
    pub failed_at: Option<usize>,
}

/// A finished cooperative run.
#[derive(Debug, Clone)]
pub struct CoopRun {
    pub result: CapacityResult,
    pub trajectory: Vec<TrajectoryPoint>,
    pub generator: Mlp<f32>,
    pub discriminator: Mlp<f32>,
}

/// Scale applied after the generator's batchnorm: `1/sqrt(d)` for codebooks
/// (unit mean squared norm), 1 for continuous inputs (unit power per dimension).
pub fn output_scale(ch: &ChannelSpec) -> f64 {
    match ch.input_mode {
        InputMode::Continuous => 1.0,
        InputMode::Discrete { .. } => 1.0 / (ch.d as f64).sqrt(),
    }
}

fn source_dim(ch: &ChannelSpec) -> usize {
    match ch.input_mode {
        InputMode::Continuous => ch.d,
        InputMode::Discrete { source_bits, .. } => source_bits,
    }
}

fn sample_source<F: Scalar, R: Rng + ?Sized>(ch: &ChannelSpec, n: usize, rng: &mut R) -> Array2<F> {
    match ch.input_mode {
        InputMode::Continuous => sample_gaussian_source(ch.d, n, rng),
        InputMode::Discrete { source_bits, .. } => sample_discrete_source(source_bits, n, rng),
    }
}

enum Step {
    Ok,
    Failed,
}

fn disc_step(
    disc: &mut Mlp<f32>,
    kind: &EstimatorKind,
    batch: &SampleBatch<f32>,
    ema: &mut MineEma,
    adam: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Step, f64, f64)> {
    let (out, cache) = disc.forward(batch.stacked_inputs().view(), Mode::Train(rng))?;
    let outs = DiscriminatorOutputs::from_stacked(out.view())?;
    let obj = training_objective(kind, &outs, ema);
    let est = f64::from(estimate(kind, &outs));
    if !obj.is_finite() {
        disc.mark_failed();
        return Ok((Step::Failed, f64::from(obj.loss), est));
    }
    let (grads, _) = disc.backward(&cache, obj.stacked_grads().view())?;
    Ok(match disc.adam_step(&grads, adam) {
        Ok(()) => (Step::Ok, f64::from(obj.loss), est),
        Err(Error::NonFinite(_)) | Err(Error::ModelFailed) => (Step::Failed, f64::from(obj.loss), est),
        Err(e) => return Err(e),
    })
}

/// Loss `-estimate` for one fresh generator batch and its gradient with
/// respect to the generator parameters; `None` when the loss or the
/// gradient is non-finite.
///
/// The gradient with respect to `x_i` collects the `x` and `y = x + n` columns
/// of joint row `i`, the `x` columns of marginal row `i` and the `y` columns
/// of the marginal row that carries `y_i`.
pub fn generator_gradients<F: Scalar>(
    gen: &mut Mlp<F>,
    disc: &mut Mlp<F>,
    ch: &ChannelSpec,
    kind: &EstimatorKind,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(F, Option<ParamGrads<F>>)> {
    let z = sample_source::<F, _>(ch, batch_size, rng);
    let (raw, gcache) = gen.forward(z.view(), Mode::Train(rng))?;
    let scale = F::of(output_scale(ch));
    let x = &raw * scale;
    let y = &x + &awgn_noise::<F, _>(batch_size, ch.d, ch.sigma2, rng);
    let batch = SampleBatch::pair(x, y, rng)?;
    let (out, dcache) = disc.forward(batch.stacked_inputs().view(), Mode::Eval)?;
    let outs = DiscriminatorOutputs::from_stacked(out.view())?;
    let obj = estimate_objective(kind, &outs);
    if !obj.is_finite() {
        return Ok((obj.loss, None));
    }
    let (_, input_grads) = disc.backward(&dcache, obj.stacked_grads().view())?;
    let d = ch.d;
    let n = batch_size;
    let joint = input_grads.slice(s![..n, ..]);
    let marginal = input_grads.slice(s![n.., ..]);
    let mut gx = &joint.slice(s![.., ..d]) + &joint.slice(s![.., d..]) + marginal.slice(s![.., ..d]);
    for (i, &src) in batch.permutation.iter().enumerate() {
        let mut row = gx.row_mut(src);
        row += &marginal.slice(s![i, d..]);
    }
    gx *= scale;
    let (grads, _) = gen.backward(&gcache, gx.view())?;
    Ok((obj.loss, grads.all_finite().then_some(grads)))
}

fn gen_step(
    gen: &mut Mlp<f32>,
    disc: &mut Mlp<f32>,
    ch: &ChannelSpec,
    kind: &EstimatorKind,
    batch_size: usize,
    adam: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Step> {
    let Some(grads) = generator_gradients(gen, disc, ch, kind, batch_size, rng)?.1 else {
        return Ok(Step::Failed);
    };
    Ok(match gen.adam_step(&grads, adam) {
        Ok(()) => Step::Ok,
        Err(Error::NonFinite(_)) | Err(Error::ModelFailed) => Step::Failed,
        Err(e) => return Err(e),
    })
}

/// Alternating generator/discriminator training.
///
/// A non-finite loss or gradient stops the run and marks it invalid.
pub fn cooperative_train(cfg: &CoopConfig, ch: &ChannelSpec, seed: u64) -> Result<CoopRun> {
    cfg.validate()?;
    ch.validate()?;
    let kind = cfg.estimator;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = Mlp::<f32>::new(MlpSpec::generator(source_dim(ch), ch.d), rng.gen())?;
    let mut disc = Mlp::<f32>::new(MlpSpec::discriminator(2 * ch.d, kind.head()), rng.gen())?;
    let d_adam = cfg.adam(cfg.disc_learning_rate);
    let g_adam = cfg.adam(cfg.gen_learning_rate);
    let scale = output_scale(ch) as f32;
    let mut ema = MineEma::default();
    let mut trajectory = Vec::with_capacity(cfg.total_disc_iters);
    let mut window = Vec::with_capacity(cfg.final_window);
    let mut failed_at = None;

    for it in 0..cfg.total_disc_iters {
        let z = sample_source::<f32, _>(ch, cfg.batch_size, &mut rng);
        let (raw, _) = gen.forward(z.view(), Mode::Train(&mut rng))?;
        let batch = SampleBatch::from_inputs(&raw * scale, ch.sigma2, &mut rng)?;
        let (step, j_value, i_estimate) = disc_step(&mut disc, &kind, &batch, &mut ema, &d_adam, &mut rng)?;
        trajectory.push(TrajectoryPoint {
            iter: it,
            j_value,
            i_estimate,
        });
        if let Step::Failed = step {
            failed_at = Some(it);
            break;
        }
        if it + cfg.final_window >= cfg.total_disc_iters {
            let (out, _) = disc.forward(batch.stacked_inputs().view(), Mode::Eval)?;
            let outs = DiscriminatorOutputs::from_stacked(out.view())?;
            window.push(f64::from(estimate(&kind, &outs)));
        }
        if (it + 1) % cfg.disc_iters_per_gen_iter == 0 {
            if let Step::Failed = gen_step(&mut gen, &mut disc, ch, &kind, cfg.batch_size, &g_adam, &mut rng)? {
                failed_at = Some(it);
                break;
            }
        }
    }

    let valid = failed_at.is_none() && window.iter().all(|v| v.is_finite());
    let capacity_estimate = if window.is_empty() {
        f64::NAN
    } else {
        window.iter().sum::<f64>() / window.len() as f64
    };
    let renyi_capacity_estimate = match kind {
        EstimatorKind::Mmie | EstimatorKind::AlphaMmie { .. } if valid => {
            let to_mim = match kind {
                // J_MIM(D - alpha + 1/2) = sqrt(e) J_alpha(D)
                EstimatorKind::AlphaMmie { .. } => E.sqrt(),
                _ => 1.0,
            };
            let js: Vec<f64> = trajectory.iter().map(|p| p.j_value * to_mim).collect();
            renyi_capacity_estimate(&js).ok()
        }
        _ => None,
    };
    let (codebook, supportive_estimate, effective_snr_db) = match ch.input_mode {
        InputMode::Discrete { source_bits, .. } if valid => {
            let raw_book = extract_codebook(&gen, source_bits, output_scale(ch))?;
            let power = raw_book.mean_squared_norm();
            let normalized = raw_book.normalized();
            let mi = supportive_mi(&normalized, ch.sigma2, cfg.n_mc, seed ^ 0x5eed)?;
            let snr = 10.0 * (power / ch.sigma2).log10();
            (Some(raw_book), Some(mi), Some(snr))
        }
        _ => (None, None, None),
    };
    Ok(CoopRun {
        result: CapacityResult {
            capacity_estimate,
            supportive_estimate,
            effective_snr_db,
            codebook,
            renyi_capacity_estimate,
            valid,
            failed_at,
        },
        trajectory,
        generator: gen,
        discriminator: disc,
    })
}

/// Generator outputs in eval mode for every source bit pattern, times `scale`.
pub fn extract_codebook(generator: &Mlp<f32>, source_bits: usize, scale: f64) -> Result<Codebook> {
    if generator.adam_steps() == 0 {
        return Err(Error::InvalidInput("generator has not been trained".into()));
    }
    if generator.spec().input_dim != source_bits {
        return Err(Error::Shape(format!(
            "generator expects {} inputs, source has {source_bits} bits",
            generator.spec().input_dim
        )));
    }
    let patterns = all_bit_patterns::<f32>(source_bits);
    let out = generator.predict(patterns.view())?;
    Codebook::from_array((&out * scale as f32).view())
}

pub const MIN_MC_SAMPLES: usize = 10_000;

/// `h(N) = (d/2) ln(2 pi e sigma2)`.
pub fn h_noise(d: usize, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("sigma2 must be > 0, got {sigma2}")));
    }
    Ok(0.5 * d as f64 * (2.0 * PI * E * sigma2).ln())
}

/// Monte-Carlo `I(X; Y) = h(Y) - h(N)` for equiprobable codebook inputs.
///
/// Symbols are cycled evenly over the `n_mc` samples. `h(Y) - h(N)` is
/// estimated as the mean of `ln p_N(n) - ln p_Y(x + n)`, which shares the
/// noise draws between both entropies; a single-point codebook therefore
/// gives exactly 0. Each term is at most `ln M`. The result is clamped
/// below at 0.
pub fn supportive_mi(codebook: &Codebook, sigma2: f64, n_mc: usize, seed: u64) -> Result<f64> {
    if codebook.is_empty() {
        return Err(Error::InvalidInput("empty codebook".into()));
    }
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::InvalidInput(format!("n_mc must be >= {MIN_MC_SAMPLES}, got {n_mc}")));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
    }
    let m = codebook.len();
    let d = codebook.dim();
    let sd = sigma2.sqrt();
    let inv = 1.0 / (2.0 * sigma2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = vec![0.0; d];
    let mut exps = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..n_mc {
        let c = &codebook.points[i % m];
        for v in noise.iter_mut() {
            *v = sd * rng.sample::<f64, _>(StandardNormal);
        }
        let own = -noise.iter().map(|v| v * v).sum::<f64>() * inv;
        let mut top = f64::NEG_INFINITY;
        for (k, ck) in codebook.points.iter().enumerate() {
            let d2: f64 = (0..d).map(|j| (c[j] + noise[j] - ck[j]).powi(2)).sum();
            exps[k] = -d2 * inv;
            top = top.max(exps[k]);
        }
        let lse = top + exps.iter().map(|e| (e - top).exp()).sum::<f64>().ln();
        total += own - lse + (m as f64).ln();
    }
    Ok((total / n_mc as f64).max(0.0))
}

/// Largest Renyi lower bound along a trajectory of `J_MIM` values, i.e.
/// [`renyi_capacity_lb`] at the smallest `J`.
pub fn renyi_capacity_estimate(j_mim_trajectory: &[f64]) -> Result<f64> {
    if j_mim_trajectory.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    if let Some(bad) = j_mim_trajectory.iter().find(|j| !(**j > 0.0) || !j.is_finite()) {
        return Err(Error::InvalidInput(format!("J_MIM must be positive and finite, got {bad}")));
    }
    let min = j_mim_trajectory.iter().copied().fold(f64::INFINITY, f64::min);
    renyi_capacity_lb(min)
}

pub const TRAJECTORY_HEADER: &str = "iter,j_value,i_estimate";

/// Trajectory CSV; `scale` multiplies `i_estimate` (1 for nats).
pub fn trajectory_to_csv(trajectory: &[TrajectoryPoint], scale: f64) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for p in trajectory {
        writeln!(out, "{},{},{}", p.iter, p.j_value, p.i_estimate * scale).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{psk_codebook, snr_db_to_sigma2};
    use approx::assert_abs_diff_eq;

    #[test]
    fn h_noise_values() {
        assert_abs_diff_eq!(h_noise(1, 1.0).unwrap(), 1.418_938_533, epsilon = 1e-8);
        assert_abs_diff_eq!(h_noise(2, 1.0).unwrap(), 2.837_877_066, epsilon = 1e-8);
        assert_abs_diff_eq!(
            h_noise(1, 4.0).unwrap() - h_noise(1, 1.0).unwrap(),
            0.5 * 4f64.ln(),
            epsilon = 1e-12
        );
        assert!(h_noise(1, 0.0).is_err());
    }

    #[test]
    fn single_point_codebook_has_zero_information() {
        let book = Codebook::new(vec![vec![0.3, -1.2]]).unwrap();
        assert_eq!(supportive_mi(&book, 0.5, 10_000, 1).unwrap(), 0.0);
    }

    #[test]
    fn noisy_psk_carries_almost_nothing() {
        let psk = psk_codebook(8).unwrap();
        let mi = supportive_mi(&psk, snr_db_to_sigma2(-20.0), 100_000, 2).unwrap();
        assert!(mi < 0.05, "{mi}");
    }

    #[test]
    fn noiseless_limit_reaches_log_m() {
        let psk = psk_codebook(8).unwrap();
        let mi = supportive_mi(&psk, snr_db_to_sigma2(40.0), 20_000, 3).unwrap();
        assert_abs_diff_eq!(mi, 8f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn psk_ten_db_regression() {
        let psk = psk_codebook(8).unwrap();
        let mi = supportive_mi(&psk, snr_db_to_sigma2(10.0), 1_000_000, 7).unwrap();
        assert_abs_diff_eq!(mi, PSK8_10DB_REFERENCE, epsilon = 1e-12);
    }

    /// `supportive_mi(8-PSK, 10 dB, n_mc = 10^6, seed 7)`.
    const PSK8_10DB_REFERENCE: f64 = 1.535_162_367_534_286_7;

    #[test]
    fn ceiling_and_monotone_in_snr() {
        let psk = psk_codebook(8).unwrap();
        let mut last = 0.0;
        for snr in [0.0, 6.0, 12.0] {
            let mi = supportive_mi(&psk, snr_db_to_sigma2(snr), 50_000, 11).unwrap();
            assert!(mi <= 8f64.ln() + 1e-12);
            assert!(mi >= last, "{mi} < {last} at {snr} dB");
            last = mi;
        }
    }

    #[test]
    fn supportive_rejects_bad_inputs() {
        let psk = psk_codebook(4).unwrap();
        assert!(supportive_mi(&psk, 1.0, 100, 0).is_err());
        assert!(supportive_mi(&psk, 0.0, 10_000, 0).is_err());
        assert!(supportive_mi(&Codebook { points: vec![] }, 1.0, 10_000, 0).is_err());
    }

    #[test]
    fn renyi_trajectory() {
        let j0 = 2.0 * 0.5f64.exp();
        assert_abs_diff_eq!(renyi_capacity_estimate(&[j0, j0]).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            renyi_capacity_estimate(&[3.0, 2.5, 2.8]).unwrap(),
            renyi_capacity_lb(2.5).unwrap(),
            epsilon = 1e-15
        );
        assert!(renyi_capacity_estimate(&[3.0, 0.0]).is_err());
        assert!(renyi_capacity_estimate(&[]).is_err());
    }

    fn tiny(kind: EstimatorKind) -> CoopConfig {
        CoopConfig {
            total_disc_iters: 60,
            disc_iters_per_gen_iter: 5,
            batch_size: 64,
            final_window: 10,
            n_mc: 10_000,
            estimator: kind,
            ..CoopConfig::default()
        }
    }

    #[test]
    fn discrete_run_yields_normalised_codebook() {
        let ch = ChannelSpec::discrete(2, snr_db_to_sigma2(10.0), 8).unwrap();
        let cfg = CoopConfig {
            total_disc_iters: 200,
            ..tiny(EstimatorKind::AlphaMmie { alpha: -0.5 })
        };
        let run = cooperative_train(&cfg, &ch, 3).unwrap();
        let r = &run.result;
        assert!(r.valid);
        let book = r.codebook.as_ref().unwrap();
        assert_eq!(book.len(), 8);
        assert!((book.mean_squared_norm() - 1.0).abs() < 0.1, "{}", book.mean_squared_norm());
        let mi = r.supportive_estimate.unwrap();
        assert!((0.0..=8f64.ln()).contains(&mi));
        assert!(r.renyi_capacity_estimate.is_some());
        assert_eq!(run.trajectory.len(), 200);
        assert_eq!(run.generator.adam_steps(), 40);
    }

    #[test]
    fn fixed_seed_gives_identical_codebook() {
        let ch = ChannelSpec::discrete(2, 0.1, 4).unwrap();
        let a = cooperative_train(&tiny(EstimatorKind::Mmie), &ch, 9).unwrap();
        let b = cooperative_train(&tiny(EstimatorKind::Mmie), &ch, 9).unwrap();
        assert_eq!(a.result, b.result);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn continuous_run_has_no_codebook() {
        let ch = ChannelSpec::continuous(2, 1.0).unwrap();
        let run = cooperative_train(&tiny(EstimatorKind::Nwj), &ch, 1).unwrap();
        assert!(run.result.codebook.is_none());
        assert!(run.result.renyi_capacity_estimate.is_none());
        assert!(run.result.capacity_estimate.is_finite());
    }

    #[test]
    fn generator_power_contract() {
        let ch = ChannelSpec::continuous(2, 1.0).unwrap();
        let run = cooperative_train(&tiny(EstimatorKind::Mmie), &ch, 5).unwrap();
        let mut gen = run.generator.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = sample_source(&ch, 512, &mut rng);
        let (x, _) = gen.forward(z.view(), Mode::Train(&mut rng)).unwrap();
        for col in x.columns() {
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f32>() / 512.0;
            assert!((var - 1.0).abs() < 0.1, "{var}");
        }
    }

    #[test]
    fn untrained_generator_rejected() {
        let gen = Mlp::<f32>::new(MlpSpec::generator(3, 2), 0).unwrap();
        assert!(extract_codebook(&gen, 3, 1.0).is_err());
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        for (ch, kind) in [
            (ChannelSpec::discrete(2, 0.5, 4).unwrap(), EstimatorKind::Mmie),
            (ChannelSpec::continuous(2, 1.0).unwrap(), EstimatorKind::Mine { ema_rate: 1.0 }),
            (ChannelSpec::discrete(2, 0.3, 8).unwrap(), EstimatorKind::Ddime { alpha: 0.5 }),
        ] {
            let mut gen = Mlp::<f64>::new(MlpSpec::generator(source_dim(&ch), 2), 4).unwrap();
            let mut disc = Mlp::<f64>::new(MlpSpec::discriminator(4, kind.head()), 5).unwrap();
            let loss = |gen: &Mlp<f64>, disc: &mut Mlp<f64>| -> (f64, Option<ParamGrads<f64>>) {
                let mut g = gen.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                generator_gradients(&mut g, disc, &ch, &kind, 32, &mut rng).unwrap()
            };
            let (_, grads) = loss(&gen, &mut disc);
            let grads = grads.unwrap();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for idx in (0..gen.param_count()).step_by(97) {
                let p0 = gen.param(idx).unwrap();
                gen.set_param(idx, p0 + h).unwrap();
                let up = loss(&gen, &mut disc).0;
                gen.set_param(idx, p0 - h).unwrap();
                let down = loss(&gen, &mut disc).0;
                gen.set_param(idx, p0).unwrap();
                let num = (up - down) / (2.0 * h);
                let ana = grads.get(idx).unwrap();
                worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-4));
            }
            assert!(worst < 1e-4, "{kind:?}: {worst}");
        }
    }
}
