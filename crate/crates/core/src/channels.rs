//! Sources, the AWGN channel, shuffle-based marginal sampling and
//! closed-form references.
//!
//! Signal power convention: a continuous input has unit power per dimension
//! (`X ~ N(0, I)`), so `SNR = 1 / sigma2`. Codebooks are normalised to unit
//! mean squared norm.

use std::fmt::Write as _;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputMode {
    Continuous,
    /// `messages = 2^source_bits` equiprobable symbols fed to the encoder as
    /// raw bit vectors.
    Discrete { messages: usize, source_bits: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub d: usize,
    /// Noise variance per dimension.
    pub sigma2: f64,
    pub input_mode: InputMode,
}

impl ChannelSpec {
    pub fn continuous(d: usize, sigma2: f64) -> Result<Self> {
        let spec = Self {
            d,
            sigma2,
            input_mode: InputMode::Continuous,
        };
        spec.validate().map(|_| spec)
    }

    pub fn discrete(d: usize, sigma2: f64, messages: usize) -> Result<Self> {
        if messages < 2 || !messages.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "message count must be a power of two >= 2, got {messages}"
            )));
        }
        let spec = Self {
            d,
            sigma2,
            input_mode: InputMode::Discrete {
                messages,
                source_bits: messages.trailing_zeros() as usize,
            },
        };
        spec.validate().map(|_| spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig("channel dimension must be >= 1".into()));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if let InputMode::Discrete {
            messages,
            source_bits,
        } = self.input_mode
        {
            if source_bits == 0 || source_bits >= usize::BITS as usize || messages != 1 << source_bits
            {
                return Err(Error::InvalidConfig(format!(
                    "{messages} messages is inconsistent with a {source_bits}-bit source"
                )));
            }
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        -10.0 * self.sigma2.log10()
    }
}

/// `sigma2 = 10^(-snr_db / 10)`.
pub fn snr_db_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// `I = (d/2) ln(1 + 1/sigma2)` nats: the AWGN capacity under unit per-dimension power.
pub fn closed_form_awgn_mi(d: usize, sigma2: f64) -> f64 {
    0.5 * d as f64 * (1.0 / sigma2).ln_1p()
}

/// `n x d` i.i.d. standard normal entries.
pub fn sample_gaussian_source<F: Scalar, R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Array2<F> {
    Array2::from_shape_simple_fn((n, d), || F::of(rng.sample::<f64, _>(StandardNormal)))
}

/// `n` i.i.d. fair bit vectors of length `source_bits`, entries in `{0, 1}`.
pub fn sample_discrete_source<F: Scalar, R: Rng + ?Sized>(
    source_bits: usize,
    n: usize,
    rng: &mut R,
) -> Array2<F> {
    Array2::from_shape_simple_fn((n, source_bits), || {
        if rng.gen::<bool>() {
            F::one()
        } else {
            F::zero()
        }
    })
}

/// All `2^source_bits` bit patterns; row `k` holds the binary digits of `k`,
/// most significant first.
pub fn all_bit_patterns<F: Scalar>(source_bits: usize) -> Array2<F> {
    let m = 1usize << source_bits;
    Array2::from_shape_fn((m, source_bits), |(k, b)| {
        if (k >> (source_bits - 1 - b)) & 1 == 1 {
            F::one()
        } else {
            F::zero()
        }
    })
}

/// Gaussian noise with variance `sigma2` per entry.
pub fn awgn_noise<F: Scalar, R: Rng + ?Sized>(
    n: usize,
    d: usize,
    sigma2: f64,
    rng: &mut R,
) -> Array2<F> {
    let sd = sigma2.sqrt();
    Array2::from_shape_simple_fn((n, d), || F::of(sd * rng.sample::<f64, _>(StandardNormal)))
}

/// `y = x + n`, `n ~ N(0, sigma2 I)`.
pub fn awgn_transmit<F: Scalar, R: Rng + ?Sized>(
    x: ArrayView2<F>,
    sigma2: f64,
    rng: &mut R,
) -> Result<Array2<F>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("noise variance must be > 0, got {sigma2}")));
    }
    let (n, d) = x.dim();
    Ok(&x + &awgn_noise::<F, _>(n, d, sigma2, rng))
}

/// Uniform random permutation of `0..n`.
pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Rows of `y_joint` in uniformly random order. Fixed points are allowed.
pub fn shuffle_marginal<F: Scalar, R: Rng + ?Sized>(
    y_joint: ArrayView2<F>,
    rng: &mut R,
) -> Result<Array2<F>> {
    if y_joint.nrows() < 2 {
        return Err(Error::InvalidInput(
            "shuffling needs at least two samples".into(),
        ));
    }
    let perm = random_permutation(y_joint.nrows(), rng);
    Ok(y_joint.select(Axis(0), &perm))
}

/// Paired channel samples plus their shuffled counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<F> {
    pub x: Array2<F>,
    pub y_joint: Array2<F>,
    pub y_marginal: Array2<F>,
    /// `y_marginal[i] = y_joint[permutation[i]]`.
    pub permutation: Vec<usize>,
}

impl<F: Scalar> SampleBatch<F> {
    /// Gaussian source through the AWGN channel, then shuffled.
    pub fn gaussian<R: Rng + ?Sized>(ch: &ChannelSpec, n: usize, rng: &mut R) -> Result<Self> {
        let x = sample_gaussian_source::<F, _>(ch.d, n, rng);
        Self::from_inputs(x, ch.sigma2, rng)
    }

    pub fn from_inputs<R: Rng + ?Sized>(x: Array2<F>, sigma2: f64, rng: &mut R) -> Result<Self> {
        let y_joint = awgn_transmit(x.view(), sigma2, rng)?;
        Self::pair(x, y_joint, rng)
    }

    /// Builds the shuffled half from given paired samples.
    pub fn pair<R: Rng + ?Sized>(x: Array2<F>, y_joint: Array2<F>, rng: &mut R) -> Result<Self> {
        if x.nrows() != y_joint.nrows() {
            return Err(Error::Shape("x and y must have the same number of rows".into()));
        }
        if y_joint.nrows() < 2 {
            return Err(Error::InvalidInput(
                "shuffling needs at least two samples".into(),
            ));
        }
        let permutation = random_permutation(y_joint.nrows(), rng);
        let y_marginal = y_joint.select(Axis(0), &permutation);
        Ok(Self {
            x,
            y_joint,
            y_marginal,
            permutation,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// `[x | y_joint]` on top of `[x | y_marginal]`: `2n` rows of width `d_x + d`.
    pub fn stacked_inputs(&self) -> Array2<F> {
        let joint = concatenate![Axis(1), self.x, self.y_joint];
        let marginal = concatenate![Axis(1), self.x, self.y_marginal];
        concatenate![Axis(0), joint, marginal]
    }
}

/// A finite channel-input alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub points: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let d = points.first().map(Vec::len).unwrap_or(0);
        if points.is_empty() || d == 0 {
            return Err(Error::InvalidInput("codebook must be non-empty".into()));
        }
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Shape("codebook points differ in dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook point".into()));
        }
        Ok(Self { points })
    }

    pub fn from_array<F: Scalar>(a: ArrayView2<F>) -> Result<Self> {
        Self::new(
            a.outer_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn mean_squared_norm(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / self.len() as f64
    }

    /// Copy rescaled to unit mean squared norm; an all-zero codebook is returned unchanged.
    pub fn normalized(&self) -> Self {
        let p = self.mean_squared_norm();
        if p <= 0.0 {
            return self.clone();
        }
        let s = p.sqrt().recip();
        Self {
            points: self
                .points
                .iter()
                .map(|q| q.iter().map(|v| v * s).collect())
                .collect(),
        }
    }

    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
                best = best.min(d2.sqrt());
            }
        }
        best
    }

    /// CSV with header `index,x1,...,xd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index");
        for j in 1..=self.dim() {
            write!(out, ",x{j}").unwrap();
        }
        out.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for v in p {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Codebook::to_csv`] output; `#` lines are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty codebook CSV".into()))?;
        if !header.starts_with("index") {
            return Err(Error::InvalidInput(format!("unexpected header {header:?}")));
        }
        let points = lines
            .map(|l| {
                l.split(',')
                    .skip(1)
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidInput(format!("bad value {v:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }
}

/// `M` points on the unit circle at angles `2 pi k / M`.
pub fn psk_codebook(m: usize) -> Result<Codebook> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("PSK needs M >= 2, got {m}")));
    }
    let points = (0..m)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            vec![t.cos(), t.sin()]
        })
        .collect();
    Codebook::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_db_to_sigma2(0.0), 1.0);
        assert_abs_diff_eq!(snr_db_to_sigma2(10.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(snr_db_to_sigma2(-10.0), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_source_moments() {
        let n = 100_000;
        let x: Array2<f64> = sample_gaussian_source(2, n, &mut rng(1));
        for col in x.columns() {
            assert!(col.mean().unwrap().abs() < 3.0 / (n as f64).sqrt());
            assert!((col.var(1.0) - 1.0).abs() < 0.05);
        }
        let again: Array2<f64> = sample_gaussian_source(2, n, &mut rng(1));
        assert_eq!(x, again);
    }

    #[test]
    fn discrete_source_is_uniform_over_patterns() {
        let n = 100_000;
        let z: Array2<f64> = sample_discrete_source(3, n, &mut rng(2));
        let mut counts = [0usize; 8];
        for row in z.outer_iter() {
            let k = row.iter().fold(0, |acc, &b| acc * 2 + b as usize);
            counts[k] += 1;
        }
        let p = 1.0 / 8.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
        let one: Array2<f32> = sample_discrete_source(3, 1, &mut rng(3));
        assert_eq!(one.dim(), (1, 3));
        assert!(one.iter().all(|&b| b == 0.0 || b == 1.0));
        let again: Array2<f64> = sample_discrete_source(3, n, &mut rng(2));
        assert_eq!(z, again);
    }

    #[test]
    fn bit_patterns_enumerate_messages() {
        let p: Array2<f64> = all_bit_patterns(3);
        assert_eq!(p.dim(), (8, 3));
        assert_eq!(p.row(5).to_vec(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn awgn_noise_statistics() {
        let n = 100_000;
        let x = Array2::<f64>::zeros((n, 2));
        let y = awgn_transmit(x.view(), 0.3, &mut rng(4)).unwrap();
        for col in y.columns() {
            assert!(col.mean().unwrap().abs() < 3.0 * (0.3 / n as f64).sqrt());
            assert!((col.var(1.0) / 0.3 - 1.0).abs() < 0.05);
        }
        let tiny = awgn_transmit(x.view(), 1e-12, &mut rng(5)).unwrap();
        assert!(tiny.iter().all(|v| v.abs() < 1e-5));
        assert!(awgn_transmit(x.view(), 0.0, &mut rng(5)).is_err());
        assert_eq!(y, awgn_transmit(x.view(), 0.3, &mut rng(4)).unwrap());
    }

    #[test]
    fn shuffle_of_two_is_fair() {
        let y = ndarray::array![[0.0f64], [1.0]];
        let swaps = (0..10_000u64)
            .filter(|&s| shuffle_marginal(y.view(), &mut rng(s)).unwrap()[[0, 0]] == 1.0)
            .count();
        // binomial(10^4, 1/2): sd = 50
        assert!((swaps as f64 - 5_000.0).abs() < 4.0 * 50.0, "{swaps}");
    }

    #[test]
    fn shuffle_rejects_single_row() {
        let y = ndarray::array![[0.0f64, 1.0]];
        assert!(shuffle_marginal(y.view(), &mut rng(0)).is_err());
    }

    proptest! {
        #[test]
        fn shuffle_preserves_rows(n in 2usize..64, seed in any::<u64>()) {
            let y: Array2<f64> = sample_gaussian_source(3, n, &mut rng(seed));
            let s = shuffle_marginal(y.view(), &mut rng(seed ^ 1)).unwrap();
            let sort = |a: &Array2<f64>| {
                let mut rows: Vec<Vec<f64>> = a.outer_iter().map(|r| r.to_vec()).collect();
                rows.sort_by(|p, q| p.partial_cmp(q).unwrap());
                rows
            };
            prop_assert_eq!(sort(&y), sort(&s));
        }

        #[test]
        fn closed_form_is_additive_and_increasing(d in 1usize..20, s in 1e-3f64..1e3) {
            let i = closed_form_awgn_mi(d, s);
            prop_assert!((i - d as f64 * closed_form_awgn_mi(1, s)).abs() < 1e-9 * i.max(1.0));
            prop_assert!(closed_form_awgn_mi(d, s * 0.9) > i);
        }
    }

    #[test]
    fn closed_form_values() {
        assert_abs_diff_eq!(closed_form_awgn_mi(2, 1.0), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(closed_form_awgn_mi(10, 0.1), 5.0 * 11f64.ln(), epsilon = 1e-12);
        assert!(closed_form_awgn_mi(2, 1e300) < 1e-299);
    }

    #[test]
    fn psk_geometry() {
        let q = psk_codebook(4).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (p, e) in q.points.iter().zip(expect) {
            assert_abs_diff_eq!(p[0], e[0], epsilon = 1e-15);
            assert_abs_diff_eq!(p[1], e[1], epsilon = 1e-15);
        }
        let p8 = psk_codebook(8).unwrap();
        assert_eq!(p8.len(), 8);
        assert_abs_diff_eq!(
            p8.min_distance(),
            2.0 * (std::f64::consts::PI / 8.0).sin(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(p8.mean_squared_norm(), 1.0, epsilon = 1e-15);
        assert!(psk_codebook(1).is_err());
    }

    #[test]
    fn codebook_csv_round_trip() {
        let cb = psk_codebook(8).unwrap();
        let csv = cb.to_csv();
        assert!(csv.starts_with("index,x1,x2\n0,1,0\n"));
        assert_eq!(Codebook::from_csv(&csv).unwrap(), cb);
    }

    #[test]
    fn channel_spec_validation() {
        assert!(ChannelSpec::continuous(2, 1.0).is_ok());
        assert!(ChannelSpec::continuous(0, 1.0).is_err());
        assert!(ChannelSpec::continuous(2, 0.0).is_err());
        let ch = ChannelSpec::discrete(2, 0.1, 8).unwrap();
        assert_eq!(
            ch.input_mode,
            InputMode::Discrete {
                messages: 8,
                source_bits: 3
            }
        );
        assert!(ChannelSpec::discrete(2, 0.1, 6).is_err());
        let bad = ChannelSpec {
            input_mode: InputMode::Discrete {
                messages: 8,
                source_bits: 2,
            },
            ..ch
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stacked_inputs_layout() {
        let ch = ChannelSpec::continuous(2, 1.0).unwrap();
        let b: SampleBatch<f64> = SampleBatch::gaussian(&ch, 5, &mut rng(0)).unwrap();
        let s = b.stacked_inputs();
        assert_eq!(s.dim(), (10, 4));
        assert_eq!(s.row(0).to_vec()[2..], b.y_joint.row(0).to_vec()[..]);
        assert_eq!(s.row(5).to_vec()[2..], b.y_marginal.row(0).to_vec()[..]);
    }
}
