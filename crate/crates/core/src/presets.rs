//! Built-in hardware and model shapes.
//!
//! Hardware compute rates are sustained dense half-precision matmul
//! throughput (about 80% of the datasheet peak); bandwidths are datasheet HBM
//! figures. The same values ship as JSON under `configs/`.

use crate::perf_model::{HardwareConfig, HardwareSpec, ModelArch, ModelConfig};

fn hw(name: &str, peak_flops: f64, mem_bandwidth_bytes: f64, device_mem_bytes: f64, num_devices: u32) -> HardwareSpec {
    HardwareSpec::new(HardwareConfig {
        name: name.into(),
        peak_flops,
        mem_bandwidth_bytes,
        device_mem_bytes,
        num_devices,
        tp_efficiency: 1.0,
    })
    .expect("preset hardware is valid")
}

pub fn a100_x8() -> HardwareSpec {
    hw("8xA100-80GB", 250e12, 2.039e12, 80e9, 8)
}

pub fn h100_x8() -> HardwareSpec {
    hw("8xH100-SXM", 790e12, 3.35e12, 80e9, 8)
}

pub fn h100_x4() -> HardwareSpec {
    hw("4xH100-SXM", 790e12, 3.35e12, 80e9, 4)
}

pub fn l40_x8() -> HardwareSpec {
    hw("8xL40", 145e12, 0.864e12, 48e9, 8)
}

#[allow(clippy::too_many_arguments)]
fn model(
    name: &str,
    num_layers: u64,
    hidden_dim: u64,
    num_heads: u64,
    num_kv_heads: u64,
    head_dim: u64,
    intermediate_dim: u64,
    vocab_size: u64,
) -> ModelArch {
    ModelArch::new(ModelConfig {
        name: name.into(),
        num_layers,
        hidden_dim,
        num_heads,
        num_kv_heads,
        head_dim,
        intermediate_dim,
        vocab_size,
        dtype_bytes: 2,
    })
    .expect("preset model is valid")
}

pub fn llama3_8b() -> ModelArch {
    model("llama3-8b", 32, 4096, 32, 8, 128, 14336, 128256)
}

pub fn llama3_70b() -> ModelArch {
    model("llama3-70b", 80, 8192, 64, 8, 128, 28672, 128256)
}

pub fn llama3_2_1b() -> ModelArch {
    model("llama3.2-1b", 16, 2048, 32, 8, 64, 8192, 128256)
}

pub fn llama2_7b() -> ModelArch {
    model("llama2-7b", 32, 4096, 32, 32, 128, 11008, 32000)
}

pub fn llama2_70b() -> ModelArch {
    model("llama2-70b", 80, 8192, 64, 8, 128, 28672, 32000)
}

pub fn tinyllama_1b() -> ModelArch {
    model("tinyllama-1.1b", 22, 2048, 32, 4, 64, 5632, 32000)
}

pub fn mistral_7b() -> ModelArch {
    model("mistral-7b", 32, 4096, 32, 8, 128, 14336, 32768)
}

pub fn qwen2_5_7b() -> ModelArch {
    model("qwen2.5-7b", 28, 3584, 28, 4, 128, 18944, 152064)
}

pub fn qwen2_5_32b() -> ModelArch {
    model("qwen2.5-32b", 64, 5120, 40, 8, 128, 27648, 152064)
}

pub fn hardware_presets() -> Vec<HardwareSpec> {
    vec![a100_x8(), h100_x8(), h100_x4(), l40_x8()]
}

pub fn model_presets() -> Vec<ModelArch> {
    vec![
        llama3_8b(),
        llama3_70b(),
        llama3_2_1b(),
        llama2_7b(),
        llama2_70b(),
        tinyllama_1b(),
        mistral_7b(),
        qwen2_5_7b(),
        qwen2_5_32b(),
    ]
}
