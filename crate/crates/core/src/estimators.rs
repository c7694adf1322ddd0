//! Value functions and estimate formulas for the neural estimators.
//!
//! Every function works on [`DiscriminatorOutputs`]: the discriminator
//! evaluated on paired samples (`joint`) and on shuffled samples
//! (`marginal`). Expectations are sample means. Non-finite results are
//! returned as-is so callers can count them as failures; only the
//! log-mean-exp terms of MINE and SMILE are max-shift stabilised.
//!
//! | kind | head | discriminator value function | estimate |
//! |------|------|------------------------------|----------|
//! | MMIE | linear | `J = E_j[e^(1-D)] + E_m[e^D]` (min) | `2 E_j[D] - 1` |
//! | alpha-MMIE | linear | `J = E_j[e^(a-D)] + E_m[e^(D-a)]` (min) | `2 E_j[D] - 2a` |
//! | MINE | linear | DV bound with EMA denominator (max) | `E_j[D] - ln E_m[e^D]` |
//! | NWJ | linear | `E_j[D] - E_m[e^(D-1)]` (max) | same |
//! | SMILE | linear | JS f-GAN surrogate (max) | `E_j[D] - ln E_m[clip(e^D, e^-t, e^t)]` |
//! | iDIME | sigmoid | `E_m[ln D] + E_j[ln(1-D)]` (max) | `E_j[ln((1-D)/D)]` |
//! | dDIME | softplus | `a E_j[ln D] - E_m[D]` (max) | `J/a + 1 - ln a` |

use std::f64::consts::LN_2;

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::Activation;
use crate::scalar::{log_mean_exp, mean, sigmoid, Scalar};
use crate::{Error, Result};

/// Neural estimator family and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EstimatorKind {
    Mmie,
    AlphaMmie { alpha: f64 },
    Mine { ema_rate: f64 },
    Nwj,
    Smile { tau: f64 },
    Idime,
    Ddime { alpha: f64 },
}

pub const DEFAULT_MINE_EMA_RATE: f64 = 0.99;
pub const DEFAULT_SMILE_TAU: f64 = 1.0;
pub const DEFAULT_ALPHA_BETA: f64 = 0.7;

impl EstimatorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::AlphaMmie { alpha } if !alpha.is_finite() => Err(Error::InvalidConfig(
                "alpha-MMIE alpha must be finite".into(),
            )),
            EstimatorKind::Mine { ema_rate } if !(ema_rate > 0.0 && ema_rate <= 1.0) => Err(
                Error::InvalidConfig(format!("MINE ema_rate must lie in (0, 1], got {ema_rate}")),
            ),
            EstimatorKind::Smile { tau } if !(tau > 0.0) => Err(Error::InvalidConfig(format!(
                "SMILE tau must be > 0, got {tau}"
            ))),
            EstimatorKind::Ddime { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::InvalidConfig(format!("dDIME alpha must be > 0, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    /// Output activation of the discriminator for this family.
    pub fn head(&self) -> Activation {
        match self {
            EstimatorKind::Idime => Activation::Sigmoid,
            EstimatorKind::Ddime { .. } => Activation::Softplus,
            _ => Activation::Linear,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Mmie => "mmie",
            EstimatorKind::AlphaMmie { .. } => "alpha-mmie",
            EstimatorKind::Mine { .. } => "mine",
            EstimatorKind::Nwj => "nwj",
            EstimatorKind::Smile { .. } => "smile",
            EstimatorKind::Idime => "idime",
            EstimatorKind::Ddime { .. } => "ddime",
        }
    }

    /// Name with hyperparameters, e.g. `ddime(alpha=0.1)`.
    pub fn label(&self) -> String {
        match *self {
            EstimatorKind::AlphaMmie { alpha } => format!("alpha-mmie(alpha={alpha})"),
            EstimatorKind::Mine { ema_rate } => format!("mine(ema_rate={ema_rate})"),
            EstimatorKind::Smile { tau } => format!("smile(tau={tau})"),
            EstimatorKind::Ddime { alpha } => format!("ddime(alpha={alpha})"),
            _ => self.name().to_string(),
        }
    }
}

/// Discriminator values on paired and on shuffled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutputs<F> {
    pub joint: Vec<F>,
    pub marginal: Vec<F>,
}

impl<F: Scalar> DiscriminatorOutputs<F> {
    pub fn new(joint: Vec<F>, marginal: Vec<F>) -> Result<Self> {
        if joint.len() != marginal.len() || joint.is_empty() {
            return Err(Error::Shape(format!(
                "joint/marginal lengths {} and {} must be equal and non-zero",
                joint.len(),
                marginal.len()
            )));
        }
        Ok(Self { joint, marginal })
    }

    /// Splits a `2n x 1` network output: first `n` rows joint, last `n` marginal.
    pub fn from_stacked(out: ArrayView2<F>) -> Result<Self> {
        if out.ncols() != 1 || out.nrows() % 2 != 0 {
            return Err(Error::Shape(format!(
                "expected a 2n x 1 output, got {:?}",
                out.dim()
            )));
        }
        let col: Vec<F> = out.column(0).to_vec();
        let n = col.len() / 2;
        Self::new(col[..n].to_vec(), col[n..].to_vec())
    }

    /// Constant discriminator.
    pub fn constant(value: F, n: usize) -> Self {
        Self {
            joint: vec![value; n],
            marginal: vec![value; n],
        }
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.joint.iter().chain(&self.marginal).all(|v| v.is_finite())
    }

    fn n(&self) -> F {
        F::of(self.joint.len() as f64)
    }
}

/// A scalar loss with its gradient with respect to every discriminator value.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective<F> {
    pub loss: F,
    pub grad_joint: Vec<F>,
    pub grad_marginal: Vec<F>,
}

impl<F: Scalar> Objective<F> {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .grad_joint
                .iter()
                .chain(&self.grad_marginal)
                .all(|g| g.is_finite())
    }

    /// Gradients stacked as a `2n x 1` column matching
    /// [`DiscriminatorOutputs::from_stacked`].
    pub fn stacked_grads(&self) -> ndarray::Array2<F> {
        let n = self.grad_joint.len();
        ndarray::Array2::from_shape_fn((2 * n, 1), |(i, _)| {
            if i < n {
                self.grad_joint[i]
            } else {
                self.grad_marginal[i - n]
            }
        })
    }

    fn negated(mut self) -> Self {
        self.loss = -self.loss;
        self.grad_joint.iter_mut().for_each(|g| *g = -*g);
        self.grad_marginal.iter_mut().for_each(|g| *g = -*g);
        self
    }
}

fn map_mean<F: Scalar>(xs: &[F], f: impl Fn(F) -> F) -> F {
    xs.iter().map(|&x| f(x)).sum::<F>() / F::of(xs.len() as f64)
}

/// `E_j[e^(1-D)] + E_m[e^D]`; minimised by `D* = 1/2 + 1/2 ln(p_xy / p_x p_y)`.
pub fn j_mim<F: Scalar>(outs: &DiscriminatorOutputs<F>) -> F {
    map_mean(&outs.joint, |d| (F::one() - d).exp()) + map_mean(&outs.marginal, F::exp)
}

/// `2 E_j[D] - 1`.
pub fn i_mmie<F: Scalar>(outs: &DiscriminatorOutputs<F>) -> F {
    F::of(2.0) * mean(&outs.joint) - F::one()
}

/// `E_j[e^(alpha-D)] + E_m[e^(D-alpha)]`; minimised by `D* = alpha + 1/2 ln ratio`.
pub fn j_alpha_mim<F: Scalar>(outs: &DiscriminatorOutputs<F>, alpha: f64) -> F {
    let a = F::of(alpha);
    map_mean(&outs.joint, |d| (a - d).exp()) + map_mean(&outs.marginal, |d| (d - a).exp())
}

/// `2 E_j[D] - 2 alpha`.
pub fn i_alpha_mmie<F: Scalar>(outs: &DiscriminatorOutputs<F>, alpha: f64) -> F {
    F::of(2.0) * mean(&outs.joint) - F::of(2.0 * alpha)
}

/// Shift that centres the optimal alpha-MMIE discriminator near zero:
/// `alpha = -beta/2 * min(R1, R2)` with `R1 = (d/2) ln(1 + 1/sigma2)` and
/// `R2 = ln M` when the input alphabet size is known.
pub fn select_alpha(d: usize, sigma2: f64, messages: Option<usize>, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidConfig(format!("beta must lie in (0, 1], got {beta}")));
    }
    if !(sigma2 > 0.0) || d == 0 {
        return Err(Error::InvalidConfig("need d >= 1 and sigma2 > 0".into()));
    }
    let r1 = crate::channels::closed_form_awgn_mi(d, sigma2);
    let r2 = messages.map_or(f64::INFINITY, |m| (m as f64).ln());
    Ok(-0.5 * beta * r1.min(r2))
}

/// `E_m[ln D] + E_j[ln(1-D)]`, maximised by `D* = p_x p_y / (p_xy + p_x p_y)`.
pub fn j_idime<F: Scalar>(outs: &DiscriminatorOutputs<F>) -> F {
    map_mean(&outs.marginal, F::ln) + map_mean(&outs.joint, |d| (F::one() - d).ln())
}

/// `E_j[ln((1-D)/D)]`. Saturated outputs (exactly 0 or 1) give a non-finite value.
pub fn i_idime<F: Scalar>(outs: &DiscriminatorOutputs<F>) -> F {
    map_mean(&outs.joint, |d| (F::one() - d).ln() - d.ln())
}

/// `alpha E_j[ln D] - E_m[D]`, maximised by `D* = alpha p_xy / (p_x p_y)`.
pub fn j_ddime<F: Scalar>(outs: &DiscriminatorOutputs<F>, alpha: f64) -> F {
    F::of(alpha) * map_mean(&outs.joint, F::ln) - mean(&outs.marginal)
}

/// Lower bound `J_alpha / alpha + 1 - ln alpha`.
pub fn i_ddime_lb<F: Scalar>(outs: &DiscriminatorOutputs<F>, alpha: f64) -> F {
    j_ddime(outs, alpha) / F::of(alpha) + F::of(1.0 - alpha.ln())
}

/// Point estimate `E_j[ln(D / alpha)]`.
pub fn i_ddime_point<F: Scalar>(outs: &DiscriminatorOutputs<F>, alpha: f64) -> F {
    let a = F::of(alpha);
    map_mean(&outs.joint, |d| (d / a).ln())
}

/// Donsker-Varadhan estimate `E_j[T] - ln E_m[e^T]`.
pub fn i_mine<F: Scalar>(outs: &DiscriminatorOutputs<F>) -> F {
    mean(&outs.joint) - log_mean_exp(&outs.marginal)
}

/// Moving average of the DV partition term `E_m[e^T]`, kept in log space.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MineEma {
    log_value: Option<f64>,
}

impl MineEma {
    pub fn log_value(&self) -> Option<f64> {
        self.log_value
    }
}

/// MINE training loss `-(E_j[T] - ln E_m[e^T])`.
///
/// The reported loss is the plain DV value; the gradient of the partition
/// term divides by the moving average
/// `ema <- (1 - rate) * ema + rate * mean(e^T)` instead of the batch mean,
/// so `rate = 1` reproduces the plain DV gradient.
pub fn mine_loss<F: Scalar>(
    outs: &DiscriminatorOutputs<F>,
    ema: &MineEma,
    ema_rate: f64,
) -> (Objective<F>, MineEma) {
    let n = outs.n();
    let batch_lme = log_mean_exp(&outs.marginal);
    let batch = batch_lme.as_f64();
    let log_ema = match ema.log_value {
        Some(prev) if ema_rate < 1.0 => {
            let a = (1.0 - ema_rate).ln() + prev;
            let b = ema_rate.ln() + batch;
            let m = a.max(b);
            if m.is_finite() {
                m + ((a - m).exp() + (b - m).exp()).ln()
            } else {
                m
            }
        }
        _ => batch,
    };
    let denom = F::of(log_ema) + n.ln();
    let objective = Objective {
        loss: batch_lme - mean(&outs.joint),
        grad_joint: vec![-F::one() / n; outs.len()],
        grad_marginal: outs.marginal.iter().map(|&t| (t - denom).exp()).collect(),
    };
    (
        objective,
        MineEma {
            log_value: Some(log_ema),
        },
    )
}

/// NWJ bound `E_j[T] - E_m[e^(T-1)]`.
pub fn i_nwj<F: Scalar>(outs: &DiscriminatorOutputs<F>) -> F {
    mean(&outs.joint) - map_mean(&outs.marginal, |t| (t - F::one()).exp())
}

/// SMILE estimate: DV with the partition term clipped to `[e^-tau, e^tau]`.
pub fn i_smile<F: Scalar>(outs: &DiscriminatorOutputs<F>, tau: f64) -> F {
    let t = F::of(tau);
    let clipped: Vec<F> = outs.marginal.iter().map(|&v| v.max(-t).min(t)).collect();
    mean(&outs.joint) - log_mean_exp(&clipped)
}

/// Lower bound on the order-1/2 Renyi divergence implied by a value of
/// `J_MIM`: `-2 ln J + 1 + 2 ln 2`. Equality at the optimal discriminator.
pub fn renyi_capacity_lb(j_mim_value: f64) -> Result<f64> {
    if !(j_mim_value > 0.0) || !j_mim_value.is_finite() {
        return Err(Error::InvalidInput(format!(
            "J_MIM must be positive and finite, got {j_mim_value}"
        )));
    }
    Ok(-2.0 * j_mim_value.ln() + 1.0 + 2.0 * LN_2)
}

/// Value used as the per-batch estimate in benchmarks.
pub fn estimate<F: Scalar>(kind: &EstimatorKind, outs: &DiscriminatorOutputs<F>) -> F {
    match *kind {
        EstimatorKind::Mmie => i_mmie(outs),
        EstimatorKind::AlphaMmie { alpha } => i_alpha_mmie(outs, alpha),
        EstimatorKind::Mine { .. } => i_mine(outs),
        EstimatorKind::Nwj => i_nwj(outs),
        EstimatorKind::Smile { tau } => i_smile(outs, tau),
        EstimatorKind::Idime => i_idime(outs),
        EstimatorKind::Ddime { alpha } => i_ddime_lb(outs, alpha),
    }
}

/// Loss minimised by the discriminator, with gradients.
///
/// Only MINE reads and advances `ema`.
pub fn training_objective<F: Scalar>(
    kind: &EstimatorKind,
    outs: &DiscriminatorOutputs<F>,
    ema: &mut MineEma,
) -> Objective<F> {
    let n = outs.n();
    let per = |xs: &[F], f: &dyn Fn(F) -> F| -> Vec<F> { xs.iter().map(|&x| f(x) / n).collect() };
    match *kind {
        EstimatorKind::Mmie => Objective {
            loss: j_mim(outs),
            grad_joint: per(&outs.joint, &|d| -(F::one() - d).exp()),
            grad_marginal: per(&outs.marginal, &|d| d.exp()),
        },
        EstimatorKind::AlphaMmie { alpha } => {
            let a = F::of(alpha);
            Objective {
                loss: j_alpha_mim(outs, alpha),
                grad_joint: per(&outs.joint, &|d| -(a - d).exp()),
                grad_marginal: per(&outs.marginal, &|d| (d - a).exp()),
            }
        }
        EstimatorKind::Mine { ema_rate } => {
            let (obj, next) = mine_loss(outs, ema, ema_rate);
            *ema = next;
            obj
        }
        EstimatorKind::Nwj => Objective {
            loss: -i_nwj(outs),
            grad_joint: per(&outs.joint, &|_| -F::one()),
            grad_marginal: per(&outs.marginal, &|t| (t - F::one()).exp()),
        },
        EstimatorKind::Smile { tau } => Objective {
            // critic trained on the Jensen-Shannon f-GAN bound; the clipped DV
            // value is what gets reported
            loss: -i_smile(outs, tau),
            grad_joint: per(&outs.joint, &|t| -sigmoid(-t)),
            grad_marginal: per(&outs.marginal, &|t| sigmoid(t)),
        },
        EstimatorKind::Idime => Objective {
            loss: -j_idime(outs),
            grad_joint: per(&outs.joint, &|d| F::one() / (F::one() - d)),
            grad_marginal: per(&outs.marginal, &|d| -F::one() / d),
        },
        EstimatorKind::Ddime { alpha } => {
            let a = F::of(alpha);
            Objective {
                loss: -j_ddime(outs, alpha),
                grad_joint: per(&outs.joint, &|d| -a / d),
                grad_marginal: per(&outs.marginal, &|_| F::one()),
            }
        }
    }
}

/// `-estimate` with its gradient; the generator minimises this to push the
/// estimate up.
pub fn estimate_objective<F: Scalar>(
    kind: &EstimatorKind,
    outs: &DiscriminatorOutputs<F>,
) -> Objective<F> {
    let n = outs.n();
    let zeros = vec![F::zero(); outs.len()];
    let obj = match *kind {
        EstimatorKind::Mmie | EstimatorKind::AlphaMmie { .. } => Objective {
            loss: estimate(kind, outs),
            grad_joint: vec![F::of(2.0) / n; outs.len()],
            grad_marginal: zeros,
        },
        EstimatorKind::Mine { .. } => {
            let lme = log_mean_exp(&outs.marginal) + n.ln();
            Objective {
                loss: estimate(kind, outs),
                grad_joint: vec![F::one() / n; outs.len()],
                grad_marginal: outs.marginal.iter().map(|&t| -(t - lme).exp()).collect(),
            }
        }
        EstimatorKind::Nwj => Objective {
            loss: estimate(kind, outs),
            grad_joint: vec![F::one() / n; outs.len()],
            grad_marginal: outs
                .marginal
                .iter()
                .map(|&t| -(t - F::one()).exp() / n)
                .collect(),
        },
        EstimatorKind::Smile { tau } => {
            let t = F::of(tau);
            let clipped: Vec<F> = outs.marginal.iter().map(|&v| v.max(-t).min(t)).collect();
            let lme = log_mean_exp(&clipped) + n.ln();
            Objective {
                loss: estimate(kind, outs),
                grad_joint: vec![F::one() / n; outs.len()],
                grad_marginal: outs
                    .marginal
                    .iter()
                    .map(|&v| {
                        if v > -t && v < t {
                            -(v - lme).exp()
                        } else {
                            F::zero()
                        }
                    })
                    .collect(),
            }
        }
        EstimatorKind::Idime => Objective {
            loss: estimate(kind, outs),
            grad_joint: outs
                .joint
                .iter()
                .map(|&d| (-F::one() / (F::one() - d) - F::one() / d) / n)
                .collect(),
            grad_marginal: zeros,
        },
        EstimatorKind::Ddime { alpha } => Objective {
            loss: estimate(kind, outs),
            grad_joint: outs.joint.iter().map(|&d| F::one() / (n * d)).collect(),
            grad_marginal: vec![-F::one() / (n * F::of(alpha)); outs.len()],
        },
    };
    obj.negated()
}

/// Optimal discriminator of each family, given pointwise log density ratios
/// `ln(p_xy / (p_x p_y))` at the joint and the marginal samples.
pub fn d_star_oracle<F: Scalar>(
    kind: &EstimatorKind,
    log_ratio_joint: &[F],
    log_ratio_marginal: &[F],
) -> DiscriminatorOutputs<F> {
    let half = F::of(0.5);
    let f = |lr: F| -> F {
        match *kind {
            EstimatorKind::Mmie => half + half * lr,
            EstimatorKind::AlphaMmie { alpha } => F::of(alpha) + half * lr,
            EstimatorKind::Mine { .. } | EstimatorKind::Smile { .. } => lr,
            EstimatorKind::Nwj => F::one() + lr,
            EstimatorKind::Idime => sigmoid(-lr),
            EstimatorKind::Ddime { alpha } => F::of(alpha) * lr.exp(),
        }
    };
    DiscriminatorOutputs {
        joint: log_ratio_joint.iter().map(|&v| f(v)).collect(),
        marginal: log_ratio_marginal.iter().map(|&v| f(v)).collect(),
    }
}

/// Standard bivariate Gaussian pair with correlation `rho`: an analytic
/// log-density-ratio oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPair {
    pub rho: f64,
}

impl GaussianPair {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("|rho| must be < 1, got {rho}")));
        }
        Ok(Self { rho })
    }

    /// `-1/2 ln(1 - rho^2)`.
    pub fn mutual_information(&self) -> f64 {
        -0.5 * (-self.rho * self.rho).ln_1p()
    }

    /// `ln p(x, y) - ln p(x) - ln p(y)`.
    pub fn log_ratio(&self, x: f64, y: f64) -> f64 {
        let r2 = self.rho * self.rho;
        -0.5 * (-r2).ln_1p() - (r2 * x * x - 2.0 * self.rho * x * y + r2 * y * y) / (2.0 * (1.0 - r2))
    }

    /// `n` correlated pairs.
    pub fn sample_joint<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        let s = (1.0 - self.rho * self.rho).sqrt();
        (0..n)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                (x, self.rho * x + s * e)
            })
            .collect()
    }

    /// `n` independent pairs from the product of the marginals.
    pub fn sample_product<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect()
    }

    /// Log ratios at fresh joint and product samples.
    pub fn log_ratio_samples<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let lr = |v: Vec<(f64, f64)>| v.into_iter().map(|(x, y)| self.log_ratio(x, y)).collect();
        let joint = lr(self.sample_joint(n, rng));
        let marginal = lr(self.sample_product(n, rng));
        (joint, marginal)
    }
}

/// `softplus^-1`, handy for placing a dDIME head at a target output.
pub fn inverse_softplus<F: Scalar>(y: F) -> F {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}
