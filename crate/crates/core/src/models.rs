//! The three inverse maps from a stress curve to material parameters.
//!
//! * **Bad**: MLP trained with squared error on the parameters. Because
//!   `p` and its permutation give the same curve, it learns their average.
//! * **Good**: same MLP, trained on the squared curve residual
//!   `sum_i [R(eps_i, p) - R(eps_i, |p_hat|)]^2`, which cannot see the swap.
//! * **Ugly**: two-expert mixture-density network with a softmax gate,
//!   trained by Gaussian-mixture negative log-likelihood.
//!
//! Network inputs are standardized with train-set statistics. Network outputs
//! live in standardized target units and are mapped back with the train-set
//! target mean and std.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material_model::{stress_and_grad, MaterialParams, StrainGrid, StressCurve};
use crate::nn_core::{count_params, init_net, Activation, DenseNet, ForwardCache, LayerSpec, NetGrads};

/// Trainable parameters of the Bad/Good MLP on 20 inputs.
pub const MLP_PARAM_COUNT: usize = 754;
/// Trainable parameters of the two-expert network on 20 inputs.
pub const MOE_PARAM_COUNT: usize = 1988;

pub const MLP_HIDDEN: [usize; 2] = [14, 24];
pub const EXPERT_HIDDEN: usize = 30;
pub const GATE_HIDDEN: usize = 10;
pub const LOG_SIGMA_LIMIT: f64 = 10.0;

const N_PARAMS: usize = 4;
const N_EXPERTS: usize = 2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseModelKind {
    Bad,
    Good,
    Ugly,
}

impl InverseModelKind {
    pub const ALL: [InverseModelKind; 3] = [InverseModelKind::Bad, InverseModelKind::Good, InverseModelKind::Ugly];

    pub fn as_str(self) -> &'static str {
        match self {
            InverseModelKind::Bad => "bad",
            InverseModelKind::Good => "good",
            InverseModelKind::Ugly => "ugly",
        }
    }
}

impl fmt::Display for InverseModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InverseModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bad" => Ok(InverseModelKind::Bad),
            "good" => Ok(InverseModelKind::Good),
            "ugly" => Ok(InverseModelKind::Ugly),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind `{other}` (expected bad, good or ugly)"
            ))),
        }
    }
}

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over `rows`. Constant features get std 1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot standardize an empty set".into()))?;
        let dim = first.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows of unequal length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in std.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, m) in std.iter_mut().zip(&mean) {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12 * m.abs().max(1.0)) {
                *s = 1.0;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| m + s * v)
            .collect()
    }

    fn validate(&self, dim: usize, what: &str) -> Result<()> {
        if self.mean.len() != dim || self.std.len() != dim {
            return Err(Error::Shape(format!("{what} standardizer has wrong dimension")));
        }
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation(format!("{what} standardizer has invalid constants")));
        }
        Ok(())
    }
}

/// Squared error `sum_j (pred_j - target_j)^2` and its gradient `2 (pred - target)`.
pub fn loss_mse(predicted: &[f64; 4], target: &[f64; 4]) -> (f64, [f64; 4]) {
    let mut grad = [0.0; 4];
    let mut loss = 0.0;
    for j in 0..N_PARAMS {
        let r = predicted[j] - target[j];
        loss += r * r;
        grad[j] = 2.0 * r;
    }
    (loss, grad)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared curve residual between the target curve and the curve of `|predicted_raw|`.
pub fn loss_forward(predicted_raw: &[f64; 4], target: &MaterialParams, grid: &StrainGrid) -> (f64, [f64; 4]) {
    let target_values: Vec<f64> = grid
        .points()
        .map(|eps| crate::material_model::hardening_stress(eps, target))
        .collect();
    loss_forward_against(predicted_raw, &target_values, grid)
}

/// [`loss_forward`] against already evaluated target stresses.
pub fn loss_forward_against(predicted_raw: &[f64; 4], target_values: &[f64], grid: &StrainGrid) -> (f64, [f64; 4]) {
    debug_assert_eq!(target_values.len(), grid.count());
    let p_abs = MaterialParams::from_array(predicted_raw.map(f64::abs));
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for (eps, &r_true) in grid.points().zip(target_values) {
        let (r_hat, dr) = stress_and_grad(eps, &p_abs);
        let resid = r_hat - r_true;
        loss += resid * resid;
        for j in 0..N_PARAMS {
            grad[j] += 2.0 * resid * dr[j];
        }
    }
    for j in 0..N_PARAMS {
        grad[j] *= sign(predicted_raw[j]);
    }
    (loss, grad)
}

/// `ln sum exp(x_k)`; `-inf` entries contribute nothing.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Gate probabilities plus per-expert diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOutput {
    pub gate_logits: [f64; 2],
    pub gate_probs: [f64; 2],
    pub means: [[f64; 4]; 2],
    /// Already clamped to `[-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT]`.
    pub log_sigmas: [[f64; 4]; 2],
    pub sigmas: [[f64; 4]; 2],
}

impl MixtureOutput {
    pub fn from_raw(gate_logits: [f64; 2], means: [[f64; 4]; 2], raw_log_sigmas: [[f64; 4]; 2]) -> Self {
        let m = gate_logits[0].max(gate_logits[1]);
        let w = gate_logits.map(|l| (l - m).exp());
        let total = w[0] + w[1];
        let gate_probs = w.map(|v| v / total);
        let log_sigmas = raw_log_sigmas.map(|row| row.map(|s| s.clamp(-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT)));
        let sigmas = log_sigmas.map(|row| row.map(f64::exp));
        Self {
            gate_logits,
            gate_probs,
            means,
            log_sigmas,
            sigmas,
        }
    }

    /// Index of the expert with the larger gate probability, ties to expert 0.
    pub fn dominant_expert(&self) -> usize {
        if self.gate_probs[1] > self.gate_probs[0] {
            1
        } else {
            0
        }
    }
}

/// Gradients of the mixture NLL with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnGrads {
    pub d_logits: [f64; 2],
    pub d_means: [[f64; 4]; 2],
    /// With respect to the clamped log-sigmas.
    pub d_log_sigmas: [[f64; 4]; 2],
}

/// `-ln sum_k g_k N(target | mu_k, diag(sigma_k^2))` via log-sum-exp,
/// with responsibility-weighted gradients.
pub fn loss_mdn_nll(out: &MixtureOutput, target: &[f64; 4]) -> (f64, MdnGrads) {
    let lse_gate = log_sum_exp(&out.gate_logits);
    let mut log_joint = [0.0; N_EXPERTS];
    let mut z = [[0.0; 4]; N_EXPERTS];
    for k in 0..N_EXPERTS {
        let mut log_density = 0.0;
        for j in 0..N_PARAMS {
            z[k][j] = (target[j] - out.means[k][j]) / out.sigmas[k][j];
            log_density -= 0.5 * LN_2PI + out.log_sigmas[k][j] + 0.5 * z[k][j] * z[k][j];
        }
        log_joint[k] = out.gate_logits[k] - lse_gate + log_density;
    }
    let lse = log_sum_exp(&log_joint);
    let nll = -lse;

    let mut grads = MdnGrads {
        d_logits: [0.0; 2],
        d_means: [[0.0; 4]; 2],
        d_log_sigmas: [[0.0; 4]; 2],
    };
    for k in 0..N_EXPERTS {
        let resp = (log_joint[k] - lse).exp();
        let gate = (out.gate_logits[k] - lse_gate).exp();
        grads.d_logits[k] = gate - resp;
        for j in 0..N_PARAMS {
            grads.d_means[k][j] = -resp * z[k][j] / out.sigmas[k][j];
            grads.d_log_sigmas[k][j] = resp * (1.0 - z[k][j] * z[k][j]);
        }
    }
    (nll, grads)
}

fn check_grid(expected: &StrainGrid, curve: &StressCurve) -> Result<()> {
    if curve.grid != *expected {
        return Err(Error::GridMismatch {
            expected: expected.to_string(),
            actual: curve.grid.to_string(),
        });
    }
    Ok(())
}

pub fn mlp_specs(input_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(input_dim, MLP_HIDDEN[0], Activation::Tanh),
        LayerSpec::new(MLP_HIDDEN[0], MLP_HIDDEN[1], Activation::Tanh),
        LayerSpec::new(MLP_HIDDEN[1], N_PARAMS, Activation::Identity),
    ]
}

pub fn expert_specs(input_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(input_dim, EXPERT_HIDDEN, Activation::Tanh),
        LayerSpec::new(EXPERT_HIDDEN, 2 * N_PARAMS, Activation::Identity),
    ]
}

pub fn gate_specs(input_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(input_dim, GATE_HIDDEN, Activation::Tanh),
        LayerSpec::new(GATE_HIDDEN, N_EXPERTS, Activation::Identity),
    ]
}

/// Bad/Good MLP plus the standardization constants it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub grid: StrainGrid,
    pub input_scaler: Standardizer,
    pub target_scaler: Standardizer,
    pub net: DenseNet,
}

impl MlpModel {
    /// The 754-parameter architecture with Glorot initialization.
    pub fn init(grid: StrainGrid, input_scaler: Standardizer, target_scaler: Standardizer, seed: u64) -> Result<Self> {
        let net = init_net(&mlp_specs(grid.count()), seed)?;
        if grid.count() == 20 {
            assert_eq!(count_params(&net), MLP_PARAM_COUNT);
        }
        Self::from_parts(grid, input_scaler, target_scaler, net)
    }

    pub fn from_parts(grid: StrainGrid, input_scaler: Standardizer, target_scaler: Standardizer, net: DenseNet) -> Result<Self> {
        let m = Self {
            grid,
            input_scaler,
            target_scaler,
            net,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.net.in_dim() != self.grid.count() || self.net.out_dim() != N_PARAMS {
            return Err(Error::Shape("MLP dimensions do not match grid and parameter count".into()));
        }
        self.input_scaler.validate(self.grid.count(), "input")?;
        self.target_scaler.validate(N_PARAMS, "target")
    }

    fn to_params(&self, out: &[f64]) -> [f64; 4] {
        let v = self.target_scaler.invert(out);
        [v[0], v[1], v[2], v[3]]
    }

    /// Network output mapped back to parameter units, before any `|.|`.
    pub fn raw_output(&self, curve: &StressCurve) -> Result<[f64; 4]> {
        check_grid(&self.grid, curve)?;
        let x = self.input_scaler.apply(&curve.values);
        let cache = self.net.forward_unchecked(&x);
        Ok(self.to_params(cache.output()))
    }

    /// MSE in standardized target units. Accumulates into `grads`.
    pub fn accumulate_mse(&self, x_std: &[f64], target: &MaterialParams, grads: &mut NetGrads) -> Result<f64> {
        let cache = self.net.forward_unchecked(x_std);
        let out = cache.output();
        let t = self.target_scaler.apply(&target.to_array());
        let (loss, g) = loss_mse(&[out[0], out[1], out[2], out[3]], &[t[0], t[1], t[2], t[3]]);
        self.net.backward_into(&cache, &g, grads)?;
        Ok(loss)
    }

    /// Curve-residual loss. Accumulates into `grads`.
    pub fn accumulate_forward(&self, x_std: &[f64], target_values: &[f64], grads: &mut NetGrads) -> Result<f64> {
        let cache = self.net.forward_unchecked(x_std);
        let p_raw = self.to_params(cache.output());
        let (loss, g) = loss_forward_against(&p_raw, target_values, &self.grid);
        let d_out: Vec<f64> = g.iter().zip(&self.target_scaler.std).map(|(a, s)| a * s).collect();
        self.net.backward_into(&cache, &d_out, grads)?;
        Ok(loss)
    }
}

/// Two experts and a gate, all reading the same standardized curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeNet {
    pub expert1: DenseNet,
    pub expert2: DenseNet,
    pub gate: DenseNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeGrads {
    pub expert1: NetGrads,
    pub expert2: NetGrads,
    pub gate: NetGrads,
}

impl MoeNet {
    pub fn init(input_dim: usize, seed: u64) -> Result<Self> {
        let base = seed.wrapping_mul(3);
        let net = Self {
            expert1: init_net(&expert_specs(input_dim), base)?,
            expert2: init_net(&expert_specs(input_dim), base.wrapping_add(1))?,
            gate: init_net(&gate_specs(input_dim), base.wrapping_add(2))?,
        };
        if input_dim == 20 {
            assert_eq!(net.num_params(), MOE_PARAM_COUNT);
        }
        Ok(net)
    }

    pub fn num_params(&self) -> usize {
        count_params(&self.expert1) + count_params(&self.expert2) + count_params(&self.gate)
    }

    pub fn zero_grads(&self) -> MoeGrads {
        MoeGrads {
            expert1: self.expert1.zero_grads(),
            expert2: self.expert2.zero_grads(),
            gate: self.gate.zero_grads(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.gate.in_dim();
        for (name, e) in [("expert1", &self.expert1), ("expert2", &self.expert2)] {
            if e.in_dim() != d || e.out_dim() != 2 * N_PARAMS {
                return Err(Error::Shape(format!("{name} must map {d} inputs to {} outputs", 2 * N_PARAMS)));
            }
        }
        if self.gate.out_dim() != N_EXPERTS {
            return Err(Error::Shape("gate must emit two logits".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &[f64]) -> (MixtureOutput, [ForwardCache; 3], [[f64; 4]; 2]) {
        let c1 = self.expert1.forward_unchecked(x);
        let c2 = self.expert2.forward_unchecked(x);
        let cg = self.gate.forward_unchecked(x);
        let split = |o: &[f64]| -> ([f64; 4], [f64; 4]) { ([o[0], o[1], o[2], o[3]], [o[4], o[5], o[6], o[7]]) };
        let (m1, s1) = split(c1.output());
        let (m2, s2) = split(c2.output());
        let g = cg.output();
        let raw = [s1, s2];
        let out = MixtureOutput::from_raw([g[0], g[1]], [m1, m2], raw);
        (out, [c1, c2, cg], raw)
    }

    /// Mixture NLL for one standardized sample. Accumulates into `grads`.
    pub fn accumulate_nll(&self, x_std: &[f64], target_std: &[f64; 4], grads: &mut MoeGrads) -> Result<f64> {
        let (out, [c1, c2, cg], raw) = self.forward_cached(x_std);
        let (nll, g) = loss_mdn_nll(&out, target_std);
        let expert_grad = |k: usize| -> Vec<f64> {
            let mut d = Vec::with_capacity(2 * N_PARAMS);
            d.extend_from_slice(&g.d_means[k]);
            for j in 0..N_PARAMS {
                let passes = raw[k][j].abs() <= LOG_SIGMA_LIMIT;
                d.push(if passes { g.d_log_sigmas[k][j] } else { 0.0 });
            }
            d
        };
        self.expert1.backward_into(&c1, &expert_grad(0), &mut grads.expert1)?;
        self.expert2.backward_into(&c2, &expert_grad(1), &mut grads.expert2)?;
        self.gate.backward_into(&cg, &g.d_logits, &mut grads.gate)?;
        Ok(nll)
    }
}

pub fn moe_forward(net: &MoeNet, curve_input: &[f64]) -> Result<MixtureOutput> {
    if curve_input.len() != net.gate.in_dim() {
        return Err(Error::Shape(format!(
            "mixture network expects {} inputs, got {}",
            net.gate.in_dim(),
            curve_input.len()
        )));
    }
    Ok(net.forward_cached(curve_input).0)
}

/// Mixture-density model with its standardization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeModel {
    pub grid: StrainGrid,
    pub input_scaler: Standardizer,
    pub target_scaler: Standardizer,
    #[serde(flatten)]
    pub net: MoeNet,
}

impl MoeModel {
    pub fn init(grid: StrainGrid, input_scaler: Standardizer, target_scaler: Standardizer, seed: u64) -> Result<Self> {
        let net = MoeNet::init(grid.count(), seed)?;
        let m = Self {
            grid,
            input_scaler,
            target_scaler,
            net,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.gate.in_dim() != self.grid.count() {
            return Err(Error::Shape("mixture network input does not match the grid".into()));
        }
        self.input_scaler.validate(self.grid.count(), "input")?;
        self.target_scaler.validate(N_PARAMS, "target")
    }

    /// Mixture in standardized target units.
    pub fn mixture(&self, curve: &StressCurve) -> Result<MixtureOutput> {
        check_grid(&self.grid, curve)?;
        moe_forward(&self.net, &self.input_scaler.apply(&curve.values))
    }

    pub fn predict_from_mixture(&self, out: &MixtureOutput) -> MaterialParams {
        let v = self.target_scaler.invert(&out.means[out.dominant_expert()]);
        MaterialParams::new(v[0], v[1], v[2], v[3])
    }
}

/// A trained inverse map of one of the three kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InverseModel {
    Bad(MlpModel),
    Good(MlpModel),
    Ugly(MoeModel),
}

impl InverseModel {
    pub fn kind(&self) -> InverseModelKind {
        match self {
            InverseModel::Bad(_) => InverseModelKind::Bad,
            InverseModel::Good(_) => InverseModelKind::Good,
            InverseModel::Ugly(_) => InverseModelKind::Ugly,
        }
    }

    pub fn grid(&self) -> &StrainGrid {
        match self {
            InverseModel::Bad(m) | InverseModel::Good(m) => &m.grid,
            InverseModel::Ugly(m) => &m.grid,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            InverseModel::Bad(m) | InverseModel::Good(m) => count_params(&m.net),
            InverseModel::Ugly(m) => m.net.num_params(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InverseModel::Bad(m) | InverseModel::Good(m) => m.validate(),
            InverseModel::Ugly(m) => m.validate(),
        }
    }

    /// Flattened trainable parameters, in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            InverseModel::Bad(m) | InverseModel::Good(m) => m.net.to_flat(),
            InverseModel::Ugly(m) => {
                let mut v = m.net.expert1.to_flat();
                v.extend(m.net.expert2.to_flat());
                v.extend(m.net.gate.to_flat());
                v
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn from_json(text: &str, path: &std::path::Path) -> Result<Self> {
        let m: InverseModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }
}

/// Something that maps a curve to parameters. Implemented by trained models
/// and by test oracles.
pub trait InverseMap {
    fn predict(&self, curve: &StressCurve) -> Result<MaterialParams>;
}

impl InverseMap for InverseModel {
    fn predict(&self, curve: &StressCurve) -> Result<MaterialParams> {
        match self {
            InverseModel::Bad(m) => Ok(MaterialParams::from_array(m.raw_output(curve)?)),
            InverseModel::Good(m) => Ok(MaterialParams::from_array(m.raw_output(curve)?).abs()),
            InverseModel::Ugly(m) => Ok(m.predict_from_mixture(&m.mixture(curve)?)),
        }
    }
}

impl<F> InverseMap for F
where
    F: Fn(&StressCurve) -> MaterialParams,
{
    fn predict(&self, curve: &StressCurve) -> Result<MaterialParams> {
        Ok(self(curve))
    }
}

/// Prediction rule dispatched on `kind`; rejects a model of another kind.
pub fn predict(kind: InverseModelKind, model: &InverseModel, curve: &StressCurve) -> Result<MaterialParams> {
    if model.kind() != kind {
        return Err(Error::InvalidArgument(format!(
            "model is of kind {}, expected {kind}",
            model.kind()
        )));
    }
    model.predict(curve)
}
