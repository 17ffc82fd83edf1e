//! Hardware and model descriptions, and the per-step decode cost model.
//!
//! One decode step of a transformer over a batch of `B` sequences with `S`
//! tokens of context, producing `n` new tokens per sequence, is decomposed
//! into four components:
//!
//! * parameter load: every weight is streamed from HBM once per step and the
//!   cost is shared by the whole batch;
//! * KV load: the cached keys and values of every sequence, `B * S` tokens;
//! * activation traffic: a small per-token, per-layer term;
//! * compute: dense matmul FLOPs plus the attention score/value products.
//!
//! Tensor parallelism is a single efficiency multiplier on the aggregate
//! compute and bandwidth of all devices. All times are in seconds.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar traffics per token, per layer, per hidden unit attributed to
/// activations.
pub const DEFAULT_ACT_COEFF: f64 = 20.0;

/// Hardware description exactly as it appears in a hardware JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub name: String,
    /// FLOP/s per device at the compute dtype.
    pub peak_flops: f64,
    /// Bytes/s per device.
    pub mem_bandwidth_bytes: f64,
    /// Bytes of HBM per device.
    pub device_mem_bytes: f64,
    pub num_devices: u32,
    /// Scaling factor in (0, 1] applied to aggregate compute and bandwidth.
    pub tp_efficiency: f64,
}

/// A validated [`HardwareConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HardwareConfig", into = "HardwareConfig")]
pub struct HardwareSpec(HardwareConfig);

impl HardwareSpec {
    pub fn new(config: HardwareConfig) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(config.peak_flops) {
            return Err(Error::InvalidHardware(format!(
                "peak_flops must be finite and > 0, got {}",
                config.peak_flops
            )));
        }
        if !positive(config.mem_bandwidth_bytes) {
            return Err(Error::InvalidHardware(format!(
                "mem_bandwidth_bytes must be finite and > 0, got {}",
                config.mem_bandwidth_bytes
            )));
        }
        if !positive(config.device_mem_bytes) {
            return Err(Error::InvalidHardware(format!(
                "device_mem_bytes must be finite and > 0, got {}",
                config.device_mem_bytes
            )));
        }
        if config.num_devices == 0 {
            return Err(Error::InvalidHardware("num_devices must be >= 1".into()));
        }
        if !(config.tp_efficiency > 0.0 && config.tp_efficiency <= 1.0) {
            return Err(Error::InvalidHardware(format!(
                "tp_efficiency must lie in (0, 1], got {}",
                config.tp_efficiency
            )));
        }
        Ok(Self(config))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn config(&self) -> &HardwareConfig {
        &self.0
    }

    /// FLOP/s across all devices after the tensor-parallel derating.
    pub fn aggregate_flops(&self) -> f64 {
        self.peak_flops * f64::from(self.num_devices) * self.tp_efficiency
    }

    /// Bytes/s across all devices after the tensor-parallel derating.
    pub fn aggregate_bandwidth(&self) -> f64 {
        self.mem_bandwidth_bytes * f64::from(self.num_devices) * self.tp_efficiency
    }

    pub fn flops_to_bandwidth(&self) -> f64 {
        self.peak_flops / self.mem_bandwidth_bytes
    }

    /// Same device with its memory bandwidth multiplied by `factor`.
    pub fn with_bandwidth_scaled(&self, factor: f64) -> Result<Self> {
        let mut config = self.0.clone();
        config.mem_bandwidth_bytes *= factor;
        config.name = format!("{} (bw x{factor})", config.name);
        Self::new(config)
    }
}

impl Deref for HardwareSpec {
    type Target = HardwareConfig;

    fn deref(&self) -> &HardwareConfig {
        &self.0
    }
}

impl TryFrom<HardwareConfig> for HardwareSpec {
    type Error = Error;

    fn try_from(config: HardwareConfig) -> Result<Self> {
        Self::new(config)
    }
}

impl From<HardwareSpec> for HardwareConfig {
    fn from(spec: HardwareSpec) -> Self {
        spec.0
    }
}

/// Transformer shape exactly as it appears in a model JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub num_layers: u64,
    pub hidden_dim: u64,
    pub num_heads: u64,
    pub num_kv_heads: u64,
    pub head_dim: u64,
    pub intermediate_dim: u64,
    pub vocab_size: u64,
    pub dtype_bytes: u64,
}

/// A validated [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ModelConfig", into = "ModelConfig")]
pub struct ModelArch(ModelConfig);

impl ModelArch {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let fields = [
            ("num_layers", config.num_layers),
            ("hidden_dim", config.hidden_dim),
            ("num_heads", config.num_heads),
            ("num_kv_heads", config.num_kv_heads),
            ("head_dim", config.head_dim),
            ("intermediate_dim", config.intermediate_dim),
            ("vocab_size", config.vocab_size),
            ("dtype_bytes", config.dtype_bytes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidModel(format!("{name} must be >= 1")));
        }
        if !config.num_heads.is_multiple_of(config.num_kv_heads) {
            return Err(Error::InvalidModel(format!(
                "num_heads ({}) must be a multiple of num_kv_heads ({})",
                config.num_heads, config.num_kv_heads
            )));
        }
        if config.hidden_dim != config.num_heads * config.head_dim {
            return Err(Error::InvalidModel(format!(
                "hidden_dim ({}) must equal num_heads * head_dim ({} * {})",
                config.hidden_dim, config.num_heads, config.head_dim
            )));
        }
        Ok(Self(config))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.0
    }

    /// Query heads per KV head.
    pub fn gqa_group(&self) -> u64 {
        self.num_heads / self.num_kv_heads
    }

    /// `dim_kv / dim_model`: width of one K (or V) projection relative to the
    /// hidden size.
    pub fn kv_dim_ratio(&self) -> f64 {
        (self.num_kv_heads * self.head_dim) as f64 / self.hidden_dim as f64
    }

    pub fn input_embedding_params(&self) -> u64 {
        self.vocab_size * self.hidden_dim
    }

    /// Same shape with `num_kv_heads = num_heads`.
    pub fn mha_twin(&self) -> Self {
        let mut config = self.0.clone();
        config.num_kv_heads = config.num_heads;
        config.name = format!("{} (MHA)", config.name);
        Self(config)
    }
}

impl Deref for ModelArch {
    type Target = ModelConfig;

    fn deref(&self) -> &ModelConfig {
        &self.0
    }
}

impl TryFrom<ModelConfig> for ModelArch {
    type Error = Error;

    fn try_from(config: ModelConfig) -> Result<Self> {
        Self::new(config)
    }
}

impl From<ModelArch> for ModelConfig {
    fn from(arch: ModelArch) -> Self {
        arch.0
    }
}

/// Batch shape of a decode workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub batch_size: u64,
    pub context_len: u64,
    pub gen_len: u64,
}

impl Workload {
    pub fn new(batch_size: u64, context_len: u64, gen_len: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if gen_len == 0 {
            return Err(Error::InvalidArgument("gen_len must be >= 1".into()));
        }
        Ok(Self {
            batch_size,
            context_len,
            gen_len,
        })
    }
}

/// Bytes of K and V cached per token across all layers.
pub fn kv_bytes_per_token(arch: &ModelArch) -> u64 {
    2 * arch.num_layers * arch.num_kv_heads * arch.head_dim * arch.dtype_bytes
}

/// Parameter count of a gated-MLP decoder with untied input and output
/// embeddings. Normalization weights are ignored.
pub fn param_count(arch: &ModelArch) -> u64 {
    let h = arch.hidden_dim;
    let q = h * arch.num_heads * arch.head_dim;
    let kv = 2 * h * arch.num_kv_heads * arch.head_dim;
    let o = h * h;
    let mlp = 3 * h * arch.intermediate_dim;
    arch.num_layers * (q + kv + o + mlp) + 2 * arch.vocab_size * h
}

/// Weights plus the KV cache of `batch` sequences of `seq_len` tokens.
pub fn memory_footprint(arch: &ModelArch, batch: u64, seq_len: u64) -> u64 {
    param_count(arch) * arch.dtype_bytes + batch * seq_len * kv_bytes_per_token(arch)
}

/// How the four cost components combine into a step time.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Components are serialized: total is their sum.
    #[default]
    Additive,
    /// Memory traffic overlaps compute: total is the larger of the two.
    #[serde(rename = "roofline")]
    #[value(name = "roofline")]
    RooflineMax,
}

impl CostMode {
    pub fn label(self) -> &'static str {
        match self {
            CostMode::Additive => "additive",
            CostMode::RooflineMax => "roofline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub param_load_s: f64,
    pub kv_load_s: f64,
    pub act_load_s: f64,
    pub compute_s: f64,
    pub total_s: f64,
    pub mode: CostMode,
}

impl CostBreakdown {
    pub fn new(param_load_s: f64, kv_load_s: f64, act_load_s: f64, compute_s: f64, mode: CostMode) -> Self {
        let total_s = match mode {
            CostMode::Additive => param_load_s + kv_load_s + act_load_s + compute_s,
            CostMode::RooflineMax => compute_s.max(param_load_s + kv_load_s + act_load_s),
        };
        Self {
            param_load_s,
            kv_load_s,
            act_load_s,
            compute_s,
            total_s,
            mode,
        }
    }

    pub fn memory_s(&self) -> f64 {
        self.param_load_s + self.kv_load_s + self.act_load_s
    }

    /// Every component scaled to milliseconds, total recombined in the new
    /// unit.
    pub fn to_millis(&self) -> Self {
        Self::new(
            self.param_load_s * 1e3,
            self.kv_load_s * 1e3,
            self.act_load_s * 1e3,
            self.compute_s * 1e3,
            self.mode,
        )
    }
}

/// Cost composition rule plus the activation-traffic constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub mode: CostMode,
    pub act_coeff: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            mode: CostMode::Additive,
            act_coeff: DEFAULT_ACT_COEFF,
        }
    }
}

impl From<CostMode> for CostModel {
    fn from(mode: CostMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

impl CostModel {
    /// FLOPs of one step, per generated token position.
    fn flops_per_position(arch: &ModelArch, batch: u64, seq_len: u64) -> f64 {
        let dense = 2.0 * (param_count(arch) - arch.input_embedding_params()) as f64;
        let attention = 4.0 * (arch.num_layers * arch.hidden_dim) as f64 * seq_len as f64;
        batch as f64 * (dense + attention)
    }

    fn act_bytes_per_position(&self, arch: &ModelArch, batch: u64) -> f64 {
        self.act_coeff * batch as f64 * (arch.num_layers * arch.hidden_dim * arch.dtype_bytes) as f64
    }

    /// Latency of one decode (`n_tokens = 1`) or verification
    /// (`n_tokens = gamma + 1`) step.
    pub fn step_time(
        &self,
        hw: &HardwareSpec,
        arch: &ModelArch,
        batch: u64,
        seq_len: u64,
        n_tokens: u64,
    ) -> Result<CostBreakdown> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if n_tokens == 0 {
            return Err(Error::InvalidArgument("n_tokens must be >= 1".into()));
        }
        let flops = hw.aggregate_flops();
        let bandwidth = hw.aggregate_bandwidth();
        let n = n_tokens as f64;

        // n multiplies last so that compute(n) = n * compute(1) bit for bit.
        let compute_s = Self::flops_per_position(arch, batch, seq_len) / flops * n;
        let act_load_s = self.act_bytes_per_position(arch, batch) / bandwidth * n;
        let param_load_s = (param_count(arch) * arch.dtype_bytes) as f64 / bandwidth;
        let kv_load_s =
            batch as f64 * seq_len as f64 * kv_bytes_per_token(arch) as f64 / bandwidth;

        Ok(CostBreakdown::new(
            param_load_s,
            kv_load_s,
            act_load_s,
            compute_s,
            self.mode,
        ))
    }

    /// FLOPs per byte moved for one step.
    pub fn arithmetic_intensity(&self, arch: &ModelArch, batch: u64, seq_len: u64, n_tokens: u64) -> f64 {
        let n = n_tokens as f64;
        let flops = Self::flops_per_position(arch, batch, seq_len) * n;
        let bytes = (param_count(arch) * arch.dtype_bytes) as f64
            + batch as f64 * seq_len as f64 * kv_bytes_per_token(arch) as f64
            + self.act_bytes_per_position(arch, batch) * n;
        flops / bytes
    }
}

/// [`CostModel::step_time`] with the default activation constant.
pub fn decode_step_time(
    hw: &HardwareSpec,
    arch: &ModelArch,
    batch: u64,
    seq_len: u64,
    n_tokens: u64,
    mode: CostMode,
) -> Result<CostBreakdown> {
    CostModel::from(mode).step_time(hw, arch, batch, seq_len, n_tokens)
}

/// [`CostModel::arithmetic_intensity`] with the default activation constant.
pub fn arithmetic_intensity(arch: &ModelArch, batch: u64, seq_len: u64, n_tokens: u64) -> f64 {
    CostModel::default().arithmetic_intensity(arch, batch, seq_len, n_tokens)
}
