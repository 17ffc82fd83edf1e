//! Seeded Monte Carlo of batched speculative decoding and the autoregressive
//! baseline.
//!
//! Sequence `i` draws from its own ChaCha8 stream: seeded with the run seed,
//! stream index `i`. Retired sequences leave the batch, so later steps are
//! priced at the shrunken batch size and the longest live context.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::drafting::{draft_step_time, DraftSpec};
use crate::error::{Error, Result};
use crate::perf_model::{CostModel, HardwareSpec, ModelArch, Workload};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub workload: Workload,
    pub gamma: u32,
    pub alpha: f64,
    pub draft: DraftSpec,
    pub cost: CostModel,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.workload;
        if w.batch_size == 0 || w.gen_len == 0 {
            return Err(Error::InvalidArgument("batch size and gen_len must be >= 1".into()));
        }
        if self.gamma == 0 {
            return Err(Error::InvalidArgument("gamma must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        self.draft.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub total_tokens: u64,
    pub total_steps: u64,
    pub model_time_s: f64,
    /// Mean tokens per sequence per step over steps where no sequence hit
    /// its generation limit; over all steps if there were none.
    pub empirical_omega: f64,
    pub empirical_speedup: f64,
    pub uncapped_steps: u64,
    /// Steps in which live sequences produced different token counts.
    pub misaligned_steps: u64,
    pub per_seq_tokens: Vec<u64>,
}

/// Accepted draft count: the number of leading successes in at most `gamma`
/// Bernoulli(`alpha`) trials.
pub fn draw_accepted_count<R: Rng + ?Sized>(rng: &mut R, gamma: u32, alpha: f64) -> u32 {
    let mut k = 0;
    while k < gamma && rng.random::<f64>() < alpha {
        k += 1;
    }
    k
}

/// Generator for sequence `index` of a run seeded with `seed`.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn target_time(hw: &HardwareSpec, arch: &ModelArch, cost: &CostModel, batch: u64, seq_len: u64, n: u64) -> Result<f64> {
    Ok(cost.step_time(hw, arch, batch, seq_len, n)?.total_s)
}

/// Autoregressive baseline: one token per sequence per step.
pub fn simulate_ar(hw: &HardwareSpec, target: &ModelArch, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let Workload {
        batch_size,
        context_len,
        gen_len,
    } = cfg.workload;
    let mut model_time_s = 0.0;
    for t in 0..gen_len {
        model_time_s += target_time(hw, target, &cfg.cost, batch_size, context_len + t, 1)?;
    }
    Ok(SimResult {
        total_tokens: batch_size * gen_len,
        total_steps: gen_len,
        model_time_s,
        empirical_omega: 1.0,
        empirical_speedup: 1.0,
        uncapped_steps: gen_len,
        misaligned_steps: 0,
        per_seq_tokens: vec![gen_len; batch_size as usize],
    })
}

/// Speculative decoding run. `empirical_speedup` is measured against
/// [`simulate_ar`] on the same workload.
pub fn simulate_sd(hw: &HardwareSpec, target: &ModelArch, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let Workload {
        batch_size,
        context_len,
        gen_len,
    } = cfg.workload;
    let b = batch_size as usize;
    let gamma = cfg.gamma;
    let mut rngs: Vec<_> = (0..batch_size).map(|i| sequence_rng(cfg.seed, i)).collect();
    let mut remaining = vec![gen_len; b];
    let mut context = vec![context_len; b];
    let mut produced = vec![0u64; b];

    let mut total_steps = 0;
    let mut uncapped_steps = 0;
    let mut misaligned_steps = 0;
    let mut model_time_s = 0.0;
    let (mut uncapped_tokens, mut uncapped_seq_steps) = (0u64, 0u64);
    let (mut all_tokens, mut all_seq_steps) = (0u64, 0u64);

    let mut live: Vec<usize> = (0..b).collect();
    while !live.is_empty() {
        let active = live.len() as u64;
        let s_max = live.iter().map(|&i| context[i]).max().unwrap_or(context_len);
        let d = draft_step_time(hw, target, &cfg.draft, active, s_max, &cfg.cost)?;
        let t_verify = target_time(hw, target, &cfg.cost, active, s_max, u64::from(gamma) + 1)?;
        model_time_s += f64::from(gamma) * d.total_s() + t_verify;

        let mut capped = false;
        let mut step_tokens = 0;
        let mut first: Option<u64> = None;
        let mut misaligned = false;
        for &i in &live {
            let want = u64::from(draw_accepted_count(&mut rngs[i], gamma, cfg.alpha)) + 1;
            let got = want.min(remaining[i]);
            capped |= got < want;
            remaining[i] -= got;
            context[i] += got;
            produced[i] += got;
            step_tokens += got;
            misaligned |= *first.get_or_insert(got) != got;
        }
        total_steps += 1;
        all_tokens += step_tokens;
        all_seq_steps += active;
        if !capped {
            uncapped_steps += 1;
            uncapped_tokens += step_tokens;
            uncapped_seq_steps += active;
        }
        if misaligned {
            misaligned_steps += 1;
        }
        live.retain(|&i| remaining[i] > 0);
    }

    let empirical_omega = if uncapped_seq_steps > 0 {
        uncapped_tokens as f64 / uncapped_seq_steps as f64
    } else {
        all_tokens as f64 / all_seq_steps as f64
    };
    let ar = simulate_ar(hw, target, cfg)?;
    Ok(SimResult {
        total_tokens: produced.iter().sum(),
        total_steps,
        model_time_s,
        empirical_omega,
        empirical_speedup: ar.model_time_s / model_time_s,
        uncapped_steps,
        misaligned_steps,
        per_seq_tokens: produced,
    })
}
