//! The loss family: L1, MSE, and the log-ratio SNR-style distances L1SNR
//! and L2SNR, each composed of a time-domain term and separate real and
//! imaginary spectrogram terms, plus their analytic gradients.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// 10 / ln(10): the gradient scale of the log-ratio distances.
const DB_GRAD: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    Mse,
    L1Snr,
    L2Snr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Weights of the time, real-spectrogram, and imaginary-spectrogram
    /// terms.
    #[serde(default = "default_term_weights")]
    pub term_weights: [f64; 3],
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_term_weights() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, epsilon: default_epsilon(), term_weights: default_term_weights() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.term_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("term weights must be nonnegative".into()));
        }
        Ok(())
    }
}

fn norm_p<I: Iterator<Item = f64>>(diffs: I, p: u8) -> f64 {
    match p {
        1 => diffs.map(f64::abs).sum(),
        2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        _ => unreachable!("p must be 1 or 2"),
    }
}

/// The epsilon-stabilized log-ratio distance
/// `-10 log10((|y|_p + eps) / (|y_hat - y|_p + eps))`.
///
/// Negative for good estimates, bounded below by
/// `-10 log10((|y|_p + eps) / eps)`, and zero when the error norm equals
/// the reference norm.
pub fn dist_p(y_hat: &[f64], y: &[f64], p: u8, epsilon: f64) -> f64 {
    debug_assert_eq!(y_hat.len(), y.len());
    let ny = norm_p(y.iter().copied(), p);
    let ne = norm_p(y_hat.iter().zip(y).map(|(a, b)| a - b), p);
    -10.0 * ((ny + epsilon) / (ne + epsilon)).log10()
}

/// Loss contribution of one term (a flat error vector) plus its gradient
/// scale bookkeeping. `write_grad` receives the per-coordinate gradient.
fn term_loss_and_grad(
    kind: LossKind,
    epsilon: f64,
    diffs: &[f64],
    ref_norm_p: f64,
    mut write_grad: Option<&mut dyn FnMut(usize, f64)>,
) -> f64 {
    match kind {
        LossKind::L1 => {
            let loss = diffs.iter().map(|d| d.abs()).sum();
            if let Some(g) = write_grad.as_mut() {
                for (i, d) in diffs.iter().enumerate() {
                    g(i, sign(*d));
                }
            }
            loss
        }
        LossKind::Mse => {
            let n = diffs.len() as f64;
            let loss = diffs.iter().map(|d| d * d).sum::<f64>() / n;
            if let Some(g) = write_grad.as_mut() {
                for (i, d) in diffs.iter().enumerate() {
                    g(i, 2.0 * d / n);
                }
            }
            loss
        }
        LossKind::L1Snr => {
            let ne: f64 = diffs.iter().map(|d| d.abs()).sum();
            let loss = -10.0 * ((ref_norm_p + epsilon) / (ne + epsilon)).log10();
            if let Some(g) = write_grad.as_mut() {
                let scale = DB_GRAD / (ne + epsilon);
                for (i, d) in diffs.iter().enumerate() {
                    g(i, scale * sign(*d));
                }
            }
            loss
        }
        LossKind::L2Snr => {
            let ne = norm_p(diffs.iter().copied(), 2);
            let loss = -10.0 * ((ref_norm_p + epsilon) / (ne + epsilon)).log10();
            if let Some(g) = write_grad.as_mut() {
                if ne > 0.0 {
                    let scale = DB_GRAD / ((ne + epsilon) * ne);
                    for (i, d) in diffs.iter().enumerate() {
                        g(i, scale * d);
                    }
                }
            }
            loss
        }
    }
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn ref_norm(kind: LossKind, values: impl Iterator<Item = f64>) -> f64 {
    match kind {
        LossKind::L1Snr => norm_p(values, 1),
        LossKind::L2Snr => norm_p(values, 2),
        _ => 0.0,
    }
}

/// Per-stem loss over the time-domain estimate and the real/imaginary
/// spectrogram parts.
pub fn stem_loss(
    config: &LossConfig,
    s_hat: &Array2<f64>,
    s: &Array2<f64>,
    spec_hat: &Spectrogram,
    spec: &Spectrogram,
) -> Result<f64> {
    let (loss, _, _) = stem_loss_impl(config, s_hat, s, spec_hat, spec, false)?;
    Ok(loss)
}

/// Per-stem loss plus analytic gradients w.r.t. the time-domain estimate
/// and the complex spectrogram estimate (gradient of the real part in
/// `re`, imaginary part in `im`).
pub fn stem_loss_grad(
    config: &LossConfig,
    s_hat: &Array2<f64>,
    s: &Array2<f64>,
    spec_hat: &Spectrogram,
    spec: &Spectrogram,
) -> Result<(f64, Array2<f64>, Array3<Complex64>)> {
    let (loss, dt, ds) = stem_loss_impl(config, s_hat, s, spec_hat, spec, true)?;
    Ok((loss, dt.unwrap(), ds.unwrap()))
}

#[allow(clippy::type_complexity)]
fn stem_loss_impl(
    config: &LossConfig,
    s_hat: &Array2<f64>,
    s: &Array2<f64>,
    spec_hat: &Spectrogram,
    spec: &Spectrogram,
    with_grad: bool,
) -> Result<(f64, Option<Array2<f64>>, Option<Array3<Complex64>>)> {
    config.validate()?;
    if s_hat.dim() != s.dim() {
        return Err(Error::Shape(format!(
            "time-domain shapes differ: {:?} vs {:?}",
            s_hat.dim(),
            s.dim()
        )));
    }
    if spec_hat.data.dim() != spec.data.dim() {
        return Err(Error::Shape(format!(
            "spectrogram shapes differ: {:?} vs {:?}",
            spec_hat.data.dim(),
            spec.data.dim()
        )));
    }
    let [wt, wre, wim] = config.term_weights;
    let kind = config.kind;
    let eps = config.epsilon;

    let time_diffs: Vec<f64> = s_hat.iter().zip(s.iter()).map(|(a, b)| a - b).collect();
    let re_diffs: Vec<f64> = spec_hat
        .data
        .iter()
        .zip(spec.data.iter())
        .map(|(a, b)| a.re - b.re)
        .collect();
    let im_diffs: Vec<f64> = spec_hat
        .data
        .iter()
        .zip(spec.data.iter())
        .map(|(a, b)| a.im - b.im)
        .collect();

    let nt = ref_norm(kind, s.iter().copied());
    let nre = ref_norm(kind, spec.data.iter().map(|v| v.re));
    let nim = ref_norm(kind, spec.data.iter().map(|v| v.im));

    let mut d_time = with_grad.then(|| Array2::<f64>::zeros(s_hat.dim()));
    let mut d_spec = with_grad.then(|| Array3::<Complex64>::zeros(spec_hat.data.dim()));

    let mut loss = 0.0;
    {
        let mut sink = d_time.as_mut().map(|g| {
            let flat = g.as_slice_mut().expect("standard layout");
            move |i: usize, v: f64| flat[i] += wt * v
        });
        loss += wt
            * term_loss_and_grad(
                kind,
                eps,
                &time_diffs,
                nt,
                sink.as_mut().map(|f| f as &mut dyn FnMut(usize, f64)),
            );
    }
    {
        let mut sink = d_spec.as_mut().map(|g| {
            let flat = g.as_slice_mut().expect("standard layout");
            move |i: usize, v: f64| flat[i].re += wre * v
        });
        loss += wre
            * term_loss_and_grad(
                kind,
                eps,
                &re_diffs,
                nre,
                sink.as_mut().map(|f| f as &mut dyn FnMut(usize, f64)),
            );
    }
    {
        let mut sink = d_spec.as_mut().map(|g| {
            let flat = g.as_slice_mut().expect("standard layout");
            move |i: usize, v: f64| flat[i].im += wim * v
        });
        loss += wim
            * term_loss_and_grad(
                kind,
                eps,
                &im_diffs,
                nim,
                sink.as_mut().map(|f| f as &mut dyn FnMut(usize, f64)),
            );
    }
    Ok((loss, d_time, d_spec))
}

/// Mean of the per-stem losses.
pub fn total_loss(
    config: &LossConfig,
    stems: &[(&Array2<f64>, &Array2<f64>, &Spectrogram, &Spectrogram)],
) -> Result<f64> {
    if stems.is_empty() {
        return Err(Error::Config("no stems to score".into()));
    }
    let mut sum = 0.0;
    for (s_hat, s, spec_hat, spec) in stems {
        sum += stem_loss(config, s_hat, s, spec_hat, spec)?;
    }
    Ok(sum / stems.len() as f64)
}
