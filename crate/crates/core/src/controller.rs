//! Recurrent policy controller.
//!
//! A single tanh recurrent layer reads the previous strategy and emits two
//! logits per search dimension. The first channel of the two-way softmax is
//! the mean of a Gaussian with fixed width; the next strategy is sampled from
//! it and clamped into `[0.001, 0.999]`. Weights are trained by the REINFORCE
//! rule `θ ← θ + γ·r·∇θ ln H(C_i | C_{i-1}, θ)`, with RMSprop scaling the
//! per-weight step.
//!
//! Backpropagation covers exactly one recurrent step: the hidden state that
//! was fed into the step is treated as a constant input.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;
use crate::space::StrategyVector;

pub const ACTION_MIN: f64 = 0.001;
pub const ACTION_MAX: f64 = 0.999;
pub const INIT_SCALE: f64 = 0.08;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("input has dimension {actual}, controller expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("controller weights contain non-finite values")]
    NonFiniteWeights,
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
    #[error("policy step does not match controller shape: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("not a controller checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("checkpoint content invalid: {0}")]
    Invalid(String),
}

/// Hyperparameters of the controller and its optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub dim: usize,
    pub hidden_size: usize,
    pub policy_stddev: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub use_reward_baseline: bool,
    pub baseline_momentum: f64,
}

impl ControllerConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hidden_size: 32,
            policy_stddev: 0.1,
            learning_rate: 0.1,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            use_reward_baseline: false,
            baseline_momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |msg: &str| Err(ControllerError::InvalidConfig(msg.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive");
        }
        if !(self.policy_stddev.is_finite() && self.policy_stddev > 0.0) {
            return bad("policy_stddev must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return bad("rmsprop_decay must lie in (0, 1)");
        }
        if !(self.rmsprop_epsilon.is_finite() && self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop_epsilon must be positive");
        }
        if !(self.baseline_momentum > 0.0 && self.baseline_momentum < 1.0) {
            return bad("baseline_momentum must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`, accumulated into `out`.
    fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `self += a ⊗ b`.
    fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (r, &ar) in a.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &bc) in row.iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }
}

/// Controller weights θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_h: Vec<f64>,
    pub w_ho: Matrix,
    pub b_o: Vec<f64>,
}

impl ControllerParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w_xh: Matrix::zeros(hidden, dim),
            w_hh: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
            w_ho: Matrix::zeros(2 * dim, hidden),
            b_o: vec![0.0; 2 * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.w_xh.cols
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xh.rows
    }

    /// Tensors in a fixed order: `w_xh, w_hh, b_h, w_ho, b_o`.
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.w_xh.as_slice(),
            self.w_hh.as_slice(),
            &self.b_h,
            self.w_ho.as_slice(),
            &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_xh.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            &mut self.b_h,
            self.w_ho.as_mut_slice(),
            &mut self.b_o,
        ]
    }

    pub fn num_weights(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .all(|(a, b)| a.len() == b.len())
            && self.dim() == other.dim()
            && self.hidden_size() == other.hidden_size()
    }
}

/// Mutable controller state carried between proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub hidden: Vec<f64>,
    /// Running mean of squared gradients, shaped like [`ControllerParams`].
    pub rmsprop_accumulators: ControllerParams,
    pub reward_baseline: f64,
}

impl ControllerState {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden],
            rmsprop_accumulators: ControllerParams::zeros(dim, hidden),
            reward_baseline: 0.0,
        }
    }
}

/// One sampled proposal, with everything needed to compute its gradient later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStep {
    pub input: StrategyVector,
    pub means: Vec<f64>,
    pub sampled_action: StrategyVector,
    pub log_prob: f64,
    pub hidden_before: Vec<f64>,
}

/// How the update step is scaled per weight.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepScaling {
    RmsProp,
    /// Plain gradient ascent; the accumulators are left untouched.
    Identity,
}

pub fn init_controller(
    config: &ControllerConfig,
    seed: u64,
) -> (ControllerParams, ControllerState) {
    let mut rng = rng_from_seed(seed);
    let mut params = ControllerParams::zeros(config.dim, config.hidden_size);
    for tensor in params.tensors_mut() {
        for w in tensor.iter_mut() {
            *w = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
    }
    (
        params,
        ControllerState::zeros(config.dim, config.hidden_size),
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gaussian_log_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

/// Intermediate values of one recurrent step.
struct Activations {
    hidden: Vec<f64>,
    means: Vec<f64>,
}

fn activate(params: &ControllerParams, input: &[f64], hidden_before: &[f64]) -> Activations {
    let mut hidden = params.b_h.clone();
    params.w_xh.mul_vec_add(input, &mut hidden);
    params.w_hh.mul_vec_add(hidden_before, &mut hidden);
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }
    let mut logits = params.b_o.clone();
    params.w_ho.mul_vec_add(&hidden, &mut logits);
    // exp(a) / (exp(a) + exp(b)) == sigmoid(a - b)
    let means = logits
        .chunks_exact(2)
        .map(|pair| sigmoid(pair[0] - pair[1]))
        .collect();
    Activations { hidden, means }
}

fn check_inputs(
    params: &ControllerParams,
    input: &[f64],
    hidden_before: &[f64],
) -> Result<(), ControllerError> {
    if input.len() != params.dim() {
        return Err(ControllerError::DimensionMismatch {
            expected: params.dim(),
            actual: input.len(),
        });
    }
    if hidden_before.len() != params.hidden_size() {
        return Err(ControllerError::ShapeMismatch(format!(
            "hidden state has {} entries, expected {}",
            hidden_before.len(),
            params.hidden_size()
        )));
    }
    Ok(())
}

/// Log-density of `action` given the previous strategy and hidden state.
pub fn log_prob(
    params: &ControllerParams,
    input: &[f64],
    hidden_before: &[f64],
    action: &[f64],
    sigma: f64,
) -> Result<f64, ControllerError> {
    check_inputs(params, input, hidden_before)?;
    if action.len() != params.dim() {
        return Err(ControllerError::DimensionMismatch {
            expected: params.dim(),
            actual: action.len(),
        });
    }
    let act = activate(params, input, hidden_before);
    Ok(action
        .iter()
        .zip(&act.means)
        .map(|(&a, &m)| gaussian_log_density(a, m, sigma))
        .sum())
}

/// Gradient of [`log_prob`] with respect to every weight, by backpropagation.
pub fn log_prob_gradient(
    params: &ControllerParams,
    input: &[f64],
    hidden_before: &[f64],
    action: &[f64],
    sigma: f64,
) -> Result<ControllerParams, ControllerError> {
    check_inputs(params, input, hidden_before)?;
    if action.len() != params.dim() {
        return Err(ControllerError::DimensionMismatch {
            expected: params.dim(),
            actual: action.len(),
        });
    }
    let act = activate(params, input, hidden_before);
    let mut grad = ControllerParams::zeros(params.dim(), params.hidden_size());

    let inv_var = 1.0 / (sigma * sigma);
    let mut d_logits = vec![0.0; 2 * params.dim()];
    for (k, (&a, &m)) in action.iter().zip(&act.means).enumerate() {
        let d_mean = (a - m) * inv_var;
        let d = d_mean * m * (1.0 - m);
        d_logits[2 * k] = d;
        d_logits[2 * k + 1] = -d;
    }

    grad.w_ho.add_outer(&d_logits, &act.hidden);
    grad.b_o.copy_from_slice(&d_logits);

    let mut d_pre = vec![0.0; params.hidden_size()];
    for (r, &dl) in d_logits.iter().enumerate() {
        for (j, &w) in params.w_ho.row(r).iter().enumerate() {
            d_pre[j] += w * dl;
        }
    }
    for (dp, &h) in d_pre.iter_mut().zip(&act.hidden) {
        *dp *= 1.0 - h * h;
    }

    grad.w_xh.add_outer(&d_pre, input);
    grad.w_hh.add_outer(&d_pre, hidden_before);
    grad.b_h.copy_from_slice(&d_pre);
    Ok(grad)
}

/// Samples the next strategy conditioned on `prev` and advances the hidden state.
pub fn policy_forward(
    params: &ControllerParams,
    state: &ControllerState,
    prev: &StrategyVector,
    config: &ControllerConfig,
    seed: u64,
) -> Result<(PolicyStep, ControllerState), ControllerError> {
    check_inputs(params, prev.values(), &state.hidden)?;
    if !params.is_finite() {
        return Err(ControllerError::NonFiniteWeights);
    }
    let sigma = config.policy_stddev;
    let act = activate(params, prev.values(), &state.hidden);
    let mut rng = rng_from_seed(seed);
    let mut log_prob = 0.0;
    let action: Vec<f64> = act
        .means
        .iter()
        .map(|&m| {
            let z: f64 = rng.sample(StandardNormal);
            let a = (m + sigma * z).clamp(ACTION_MIN, ACTION_MAX);
            log_prob += gaussian_log_density(a, m, sigma);
            a
        })
        .collect();
    let step = PolicyStep {
        input: prev.clone(),
        means: act.means,
        sampled_action: StrategyVector::new(action)
            .expect("clamped action components are finite and inside [0, 1]"),
        log_prob,
        hidden_before: state.hidden.clone(),
    };
    let mut next = state.clone();
    next.hidden = act.hidden;
    Ok((step, next))
}

/// Applies the policy-gradient ascent step for `step` scaled by `reward`.
pub fn policy_update(
    params: &ControllerParams,
    state: &ControllerState,
    step: &PolicyStep,
    reward: f64,
    config: &ControllerConfig,
) -> Result<(ControllerParams, ControllerState), ControllerError> {
    policy_update_with(params, state, step, reward, config, StepScaling::RmsProp)
}

#[doc(hidden)]
pub fn policy_update_with(
    params: &ControllerParams,
    state: &ControllerState,
    step: &PolicyStep,
    reward: f64,
    config: &ControllerConfig,
    scaling: StepScaling,
) -> Result<(ControllerParams, ControllerState), ControllerError> {
    if !reward.is_finite() {
        return Err(ControllerError::NonFiniteReward(reward));
    }
    if step.sampled_action.len() != params.dim() || step.means.len() != params.dim() {
        return Err(ControllerError::ShapeMismatch(format!(
            "step has {} action components, controller dim is {}",
            step.sampled_action.len(),
            params.dim()
        )));
    }
    if !state.rmsprop_accumulators.same_shape(params) {
        return Err(ControllerError::ShapeMismatch(
            "accumulators do not match parameter shapes".into(),
        ));
    }
    let grad = log_prob_gradient(
        params,
        step.input.values(),
        &step.hidden_before,
        step.sampled_action.values(),
        config.policy_stddev,
    )?;

    let advantage = if config.use_reward_baseline {
        reward - state.reward_baseline
    } else {
        reward
    };

    let mut new_params = params.clone();
    let mut new_state = state.clone();
    let rho = config.rmsprop_decay;
    let scale = config.learning_rate * advantage;
    for ((theta, acc), g) in new_params
        .tensors_mut()
        .into_iter()
        .zip(new_state.rmsprop_accumulators.tensors_mut())
        .zip(grad.tensors())
    {
        for ((t, a), &gi) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
            match scaling {
                StepScaling::RmsProp => {
                    *a = rho * *a + (1.0 - rho) * gi * gi;
                    *t += scale * gi / (a.sqrt() + config.rmsprop_epsilon);
                }
                StepScaling::Identity => *t += scale * gi,
            }
        }
    }
    if config.use_reward_baseline {
        let m = config.baseline_momentum;
        new_state.reward_baseline = m * state.reward_baseline + (1.0 - m) * reward;
    }
    if !new_params.is_finite() {
        return Err(ControllerError::NonFiniteWeights);
    }
    Ok((new_params, new_state))
}

/// Owned controller: config, weights and state together.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub config: ControllerConfig,
    pub params: ControllerParams,
    pub state: ControllerState,
}

impl Controller {
    pub fn new(config: ControllerConfig, seed: u64) -> Result<Self, ControllerError> {
        config.validate()?;
        let (params, state) = init_controller(&config, seed);
        Ok(Self {
            config,
            params,
            state,
        })
    }

    pub fn forward(
        &mut self,
        prev: &StrategyVector,
        seed: u64,
    ) -> Result<PolicyStep, ControllerError> {
        let (step, next) = policy_forward(&self.params, &self.state, prev, &self.config, seed)?;
        self.state = next;
        Ok(step)
    }

    pub fn update(&mut self, step: &PolicyStep, reward: f64) -> Result<(), ControllerError> {
        let (params, state) = policy_update(&self.params, &self.state, step, reward, &self.config)?;
        self.params = params;
        self.state = state;
        Ok(())
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        checkpoint(&self.params, &self.state, &self.config)
    }

    pub fn restore(blob: &[u8]) -> Result<Self, CheckpointError> {
        let (params, state, config) = restore(blob)?;
        Ok(Self {
            config,
            params,
            state,
        })
    }
}

// Checkpoint layout (little endian):
//   magic "SSCTRL\0\0" | version u32 | dim u32 | hidden u32 | flags u32
//   sigma, gamma, rho, eps, baseline_momentum : f64
//   params (w_xh, w_hh, b_h, w_ho, b_o) | hidden | accumulators | reward_baseline
//   fnv1a-64 of everything above
const MAGIC: &[u8; 8] = b"SSCTRL\0\0";
const VERSION: u32 = 1;
const FLAG_BASELINE: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Checksum stored in checkpoint blobs, exposed for log records.
pub fn checkpoint_checksum(blob: &[u8]) -> u64 {
    fnv1a(blob)
}

pub fn checkpoint(
    params: &ControllerParams,
    state: &ControllerState,
    config: &ControllerConfig,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 16 * params.num_weights());
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        config.dim as u32,
        config.hidden_size as u32,
        if config.use_reward_baseline {
            FLAG_BASELINE
        } else {
            0
        },
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let scalars = [
        config.policy_stddev,
        config.learning_rate,
        config.rmsprop_decay,
        config.rmsprop_epsilon,
        config.baseline_momentum,
    ];
    let tensors = params
        .tensors()
        .into_iter()
        .chain(std::iter::once(state.hidden.as_slice()))
        .chain(state.rmsprop_accumulators.tensors());
    for v in scalars
        .iter()
        .chain(tensors.flatten())
        .chain(std::iter::once(&state.reward_baseline))
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fill(&mut self, dst: &mut [f64]) -> Result<(), CheckpointError> {
        for v in dst {
            *v = self.f64()?;
        }
        Ok(())
    }
}

pub fn restore(
    blob: &[u8],
) -> Result<(ControllerParams, ControllerState, ControllerConfig), CheckpointError> {
    let mut r = Reader { buf: blob, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let flags = r.u32()?;
    if dim == 0 || hidden == 0 || dim > 1 << 16 || hidden > 1 << 16 {
        return Err(CheckpointError::Invalid(format!(
            "implausible shape dim={dim} hidden={hidden}"
        )));
    }
    let config = ControllerConfig {
        dim,
        hidden_size: hidden,
        use_reward_baseline: flags & FLAG_BASELINE != 0,
        policy_stddev: r.f64()?,
        learning_rate: r.f64()?,
        rmsprop_decay: r.f64()?,
        rmsprop_epsilon: r.f64()?,
        baseline_momentum: r.f64()?,
    };
    let mut params = ControllerParams::zeros(dim, hidden);
    for t in params.tensors_mut() {
        r.fill(t)?;
    }
    let mut state = ControllerState::zeros(dim, hidden);
    r.fill(&mut state.hidden)?;
    for t in state.rmsprop_accumulators.tensors_mut() {
        r.fill(t)?;
    }
    state.reward_baseline = r.f64()?;
    let body_len = r.pos;
    let stored = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    if r.pos != blob.len() {
        return Err(CheckpointError::Trailing(blob.len() - r.pos));
    }
    if stored != fnv1a(&blob[..body_len]) {
        return Err(CheckpointError::Checksum);
    }
    config
        .validate()
        .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    if !params.is_finite() || !state.hidden.iter().all(|v| v.is_finite()) {
        return Err(CheckpointError::Invalid("non-finite tensor values".into()));
    }
    if state
        .rmsprop_accumulators
        .tensors()
        .iter()
        .any(|t| t.iter().any(|&v| !(v.is_finite() && v >= 0.0)))
    {
        return Err(CheckpointError::Invalid(
            "accumulators must be finite and non-negative".into(),
        ));
    }
    Ok((params, state, config))
}
