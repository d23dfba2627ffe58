//! The bottleneck quantizer and the gradient-passing strategies that bridge
//! it during training.
//!
//! Each bridge builds the decoder input on a [`Graph`] from the encoder
//! output `e`:
//!
//! | kind     | forward value          | gradient w.r.t. `e`                      |
//! |----------|------------------------|------------------------------------------|
//! | `None`   | `e`                    | identity                                 |
//! | `Ste`    | `Q(e)`                 | identity                                 |
//! | `Mste`   | `Q(e)`                 | identity + `sg[q_e/σ]·∂σ/∂e`             |
//! | `Na`     | `e + α·σ_e·n`          | identity + `α·n·∂σ_e/∂e`                 |
//! | `NaDet`  | `e + sg[α·σ_e·n]`      | identity                                 |
//!
//! where `q_e = Q(e) − e`, `σ = std(q_e)` and `n` is standard normal noise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::datagen::{bits_per_value, LevelTable};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, Matrix, Prng};

/// Fixed scalar quantizer.
#[derive(Debug, Clone)]
pub struct QuantizerSpec {
    table: LevelTable,
    bits_per_value: u32,
}

impl QuantizerSpec {
    pub fn new(levels: &[f64]) -> Result<Self> {
        let table = LevelTable::new(levels)?;
        let bits_per_value = bits_per_value(levels)?;
        Ok(Self {
            table,
            bits_per_value,
        })
    }

    pub fn levels(&self) -> &[f64] {
        self.table.levels()
    }

    pub fn bits_per_value(&self) -> u32 {
        self.bits_per_value
    }

    pub fn quantize(&self, e: &Matrix) -> Matrix {
        self.table.quantize_matrix(e)
    }
}

impl PartialEq for QuantizerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.levels() == other.levels()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// No quantizer at all.
    None,
    Ste,
    Mste,
    /// Additive noise attached to the graph through `σ_e`.
    Na,
    /// Additive noise with a stopped gradient.
    NaDet,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::None,
        EstimatorKind::Ste,
        EstimatorKind::Mste,
        EstimatorKind::Na,
        EstimatorKind::NaDet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::None => "none",
            EstimatorKind::Ste => "ste",
            EstimatorKind::Mste => "mste",
            EstimatorKind::Na => "na",
            EstimatorKind::NaDet => "na_det",
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, EstimatorKind::Na | EstimatorKind::NaDet)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Default embedding-to-noise ratio for the noise-addition variants, in dB.
pub const DEFAULT_NA_RATIO_DB: f64 = 4.0;

/// Weight used for the commitment loss when it is switched on.
pub const DEFAULT_CL_WEIGHT: f64 = 0.1;

/// Estimator kind plus its loss and noise settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Weight of the commitment loss; zero disables it.
    pub cl_weight: f64,
    /// Embedding-to-noise ratio in dB, used by `Na` and `NaDet` only.
    pub na_ratio_db: f64,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            cl_weight: 0.0,
            na_ratio_db: DEFAULT_NA_RATIO_DB,
        }
    }

    pub fn with_cl(mut self, weight: f64) -> Self {
        self.cl_weight = weight;
        self
    }

    pub fn with_ratio_db(mut self, db: f64) -> Self {
        self.na_ratio_db = db;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cl_weight.is_finite() && self.cl_weight >= 0.0) {
            return Err(Error::Config(format!(
                "commitment loss weight must be >= 0, got {}",
                self.cl_weight
            )));
        }
        if self.kind.is_noise() && !(0.0..=8.0).contains(&self.na_ratio_db) {
            return Err(Error::Config(format!(
                "noise ratio must lie in [0, 8] dB, got {}",
                self.na_ratio_db
            )));
        }
        Ok(())
    }
}

/// Noise scale `α = 10^(-ratio_db / 20)`.
pub fn noise_alpha(ratio_db: f64) -> f64 {
    10f64.powf(-ratio_db / 20.0)
}

/// Output of a quantizing bridge: the decoder input and the commitment
/// target (the hard-quantized embedding, or the noisy one for noise kinds).
#[derive(Debug, Clone)]
pub struct Bridged {
    pub d_in: Tensor,
    pub e_q: Matrix,
}

pub fn bridge_none(_g: &mut Graph, e: Tensor) -> Tensor {
    e
}

/// `e + sg[Q(e) − e]`.
pub fn bridge_ste(g: &mut Graph, e: Tensor, spec: &QuantizerSpec) -> Result<Bridged> {
    let e_val = g.value(e);
    let e_q = spec.quantize(e_val);
    let q_err = e_q.zip_map(e_val, |q, x| q - x);
    let q_err = g.constant(q_err);
    let d_in = g.add(e, q_err)?;
    Ok(Bridged { d_in, e_q })
}

/// `e + sg[q_e] · σ/sg[σ]` with `q_e = sg[Q(e)] − e` and `σ = std(q_e)`.
///
/// The modifier is exactly one in the forward pass, so the forward values
/// match [`bridge_ste`] bit for bit. Backward, the stopped noise is tied to
/// the graph through `σ`: `∂d_in/∂e = 1 + sg[q_e/σ]·∂σ/∂e`.
pub fn bridge_mste(g: &mut Graph, e: Tensor, spec: &QuantizerSpec) -> Result<Bridged> {
    let (rows, cols) = e.shape();
    if rows * cols < 2 {
        return Err(Error::Contract(
            "modified STE needs at least two elements".into(),
        ));
    }
    let e_q = spec.quantize(g.value(e));
    let e_q_c = g.constant(e_q.clone());
    let q_err = g.sub(e_q_c, e)?;
    let sigma = g.std_all(q_err)?;
    let q_err_sg = g.stop_grad(q_err);
    let sigma_sg = g.stop_grad(sigma);
    let modifier = g.div(sigma, sigma_sg)?;
    let noise = g.mul(q_err_sg, modifier)?;
    let d_in = g.add(e, noise)?;
    Ok(Bridged { d_in, e_q })
}

/// `e + U` with `U = α·σ_e·n`; with `detach` the noise term is stopped.
pub fn bridge_na(
    g: &mut Graph,
    e: Tensor,
    ratio_db: f64,
    prng: &mut Prng,
    detach: bool,
) -> Result<Tensor> {
    let (rows, cols) = e.shape();
    let sigma_e = g.std_all(e)?;
    let noise = g.constant(gaussian_matrix(prng, rows, cols));
    let scaled = g.mul(noise, sigma_e)?;
    let mut u = g.scale(scaled, noise_alpha(ratio_db));
    if detach {
        u = g.stop_grad(u);
    }
    g.add(e, u)
}

/// `mean((e − sg[e_q])²)`; only `e` receives gradient.
pub fn commitment_loss(g: &mut Graph, e: Tensor, e_q: &Matrix) -> Result<Tensor> {
    if e.shape() != e_q.shape() {
        return Err(Error::Shape {
            op: "commitment_loss",
            lhs: e.shape(),
            rhs: e_q.shape(),
        });
    }
    let target = g.constant(e_q.clone());
    g.mse(e, target)
}

/// Decoder input for a training step under `config`, plus `Q(e)`.
pub fn apply_bridge(
    g: &mut Graph,
    e: Tensor,
    config: &EstimatorConfig,
    spec: &QuantizerSpec,
    noise: &mut Prng,
) -> Result<Bridged> {
    match config.kind {
        EstimatorKind::Ste => bridge_ste(g, e, spec),
        EstimatorKind::Mste => bridge_mste(g, e, spec),
        EstimatorKind::None => {
            let e_q = spec.quantize(g.value(e));
            Ok(Bridged {
                d_in: bridge_none(g, e),
                e_q,
            })
        }
        // The noisy embedding stands in for the quantized one, so the
        // commitment target is `e + u`.
        EstimatorKind::Na | EstimatorKind::NaDet => {
            let detached = config.kind == EstimatorKind::NaDet;
            let d_in = bridge_na(g, e, config.na_ratio_db, noise, detached)?;
            let e_q = g.value(d_in).clone();
            Ok(Bridged { d_in, e_q })
        }
    }
}

/// Inference-time bridge: every kind except `None` uses the hard quantizer.
pub fn inference_bridge(e: &Matrix, kind: EstimatorKind, spec: &QuantizerSpec) -> Matrix {
    match kind {
        EstimatorKind::None => e.clone(),
        _ => spec.quantize(e),
    }
}
