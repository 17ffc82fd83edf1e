//! Searches and grid sweeps over the cost model.

use serde::Serialize;

use crate::drafting::{draft_step_time, AcceptanceTable, DraftSpec};
use crate::error::{Error, Result};
use crate::perf_model::{CostModel, HardwareSpec, ModelArch};
use crate::speedup::{self, MinAcceptance, SpeedupReport};

pub const DEFAULT_GAMMA_MAX: u32 = 16;

/// One evaluated drafting configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub method_tag: String,
    /// `None` for a full-KV external draft.
    pub kv_budget: Option<u64>,
    pub gamma: u32,
    pub alpha: f64,
    pub report: SpeedupReport,
    pub draft: DraftSpec,
}

/// Outcome of a budget search. `skipped` lists candidates larger than the
/// context.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetPlan {
    pub best: PlanResult,
    pub candidates: Vec<PlanResult>,
    pub skipped: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub batch: u64,
    pub seqlen: u64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InflectionResult {
    pub s_inflection: Option<u64>,
    pub batch_grid: Vec<u64>,
    pub seq_grid: Vec<u64>,
    /// Sequence-major, then batch.
    pub grid: Vec<GridCell>,
}

impl InflectionResult {
    pub fn speedup(&self, batch: u64, seqlen: u64) -> Option<f64> {
        self.grid
            .iter()
            .find(|c| c.batch == batch && c.seqlen == seqlen)
            .map(|c| c.speedup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub batch: u64,
    pub seqlen: u64,
    pub report: SpeedupReport,
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub hw: HardwareSpec,
    pub target: ModelArch,
    pub cost: CostModel,
}

impl Planner {
    pub fn new(hw: HardwareSpec, target: ModelArch, cost: CostModel) -> Self {
        Self { hw, target, cost }
    }

    fn target_time(&self, batch: u64, seq_len: u64, n_tokens: u64) -> Result<f64> {
        Ok(self.cost.step_time(&self.hw, &self.target, batch, seq_len, n_tokens)?.total_s)
    }

    pub fn analyze(&self, draft: &DraftSpec, batch: u64, seq_len: u64, gamma: u32, alpha: f64) -> Result<SpeedupReport> {
        if gamma == 0 {
            return Err(Error::InvalidArgument("gamma must be >= 1".into()));
        }
        let t_target = self.target_time(batch, seq_len, 1)?;
        let t_verify = self.target_time(batch, seq_len, u64::from(gamma) + 1)?;
        let d = draft_step_time(&self.hw, &self.target, draft, batch, seq_len, &self.cost)?;
        SpeedupReport::new(t_target, d.t_draft_s, d.t_select_s, t_verify, gamma, alpha)
    }

    /// Scans `gamma in 1..=gamma_max`; ties go to the smaller gamma.
    pub fn optimize_gamma(
        &self,
        draft: &DraftSpec,
        batch: u64,
        seq_len: u64,
        alpha: f64,
        gamma_max: u32,
    ) -> Result<(u32, SpeedupReport)> {
        if gamma_max == 0 {
            return Err(Error::InvalidArgument("gamma_max must be >= 1".into()));
        }
        let t_target = self.target_time(batch, seq_len, 1)?;
        let d = draft_step_time(&self.hw, &self.target, draft, batch, seq_len, &self.cost)?;
        let mut best: Option<SpeedupReport> = None;
        for gamma in 1..=gamma_max {
            let t_verify = self.target_time(batch, seq_len, u64::from(gamma) + 1)?;
            let r = SpeedupReport::new(t_target, d.t_draft_s, d.t_select_s, t_verify, gamma, alpha)?;
            if best.is_none_or(|b| r.speedup > b.speedup) {
                best = Some(r);
            }
        }
        let best = best.expect("gamma grid is non-empty");
        Ok((best.gamma, best))
    }

    fn plan(&self, draft: &DraftSpec, alpha: f64, batch: u64, seq_len: u64, gamma_max: u32) -> Result<PlanResult> {
        let (gamma, report) = self.optimize_gamma(draft, batch, seq_len, alpha, gamma_max)?;
        Ok(PlanResult {
            method_tag: draft.method_tag().to_string(),
            kv_budget: draft.kv_budget(),
            gamma,
            alpha,
            report,
            draft: draft.clone(),
        })
    }

    /// Searches KV budgets for the strategy of `template`, looking up the
    /// acceptance rate of each budget under the template's method tag.
    /// Budgets larger than `seq_len` are skipped. Ties go to the smaller
    /// budget.
    #[allow(clippy::too_many_arguments)]
    pub fn optimize_budget(
        &self,
        template: &DraftSpec,
        task: &str,
        budgets: &[u64],
        acceptance: &AcceptanceTable,
        batch: u64,
        seq_len: u64,
        gamma_max: u32,
    ) -> Result<BudgetPlan> {
        if budgets.is_empty() {
            return Err(Error::InvalidArgument("budget list is empty".into()));
        }
        let mut candidates = Vec::new();
        let mut skipped = Vec::new();
        for &k in budgets {
            if k > seq_len {
                skipped.push(k);
                continue;
            }
            let draft = template.with_budget(k)?;
            let alpha = acceptance.lookup_alpha(draft.method_tag(), task, k)?;
            candidates.push(self.plan(&draft, alpha, batch, seq_len, gamma_max)?);
        }
        let best = candidates
            .iter()
            .reduce(|best, c| {
                let better = c.report.speedup > best.report.speedup
                    || (c.report.speedup == best.report.speedup && c.kv_budget < best.kv_budget);
                if better {
                    c
                } else {
                    best
                }
            })
            .cloned()
            .ok_or_else(|| Error::NoFeasibleBudget {
                context: seq_len,
                budgets: budgets.to_vec(),
            })?;
        Ok(BudgetPlan {
            best,
            candidates,
            skipped,
        })
    }

    /// Ranks drafts by predicted speedup, highest first. Equal scores keep
    /// input order. A full-KV external draft is looked up at budget
    /// `seq_len`.
    pub fn compare_strategies(
        &self,
        drafts: &[DraftSpec],
        acceptance: &AcceptanceTable,
        task: &str,
        batch: u64,
        seq_len: u64,
        gamma_max: u32,
    ) -> Result<Vec<PlanResult>> {
        let mut ranked = drafts
            .iter()
            .map(|draft| {
                let budget = draft.kv_budget().unwrap_or(seq_len);
                let alpha = acceptance.lookup_alpha(draft.method_tag(), task, budget)?;
                self.plan(draft, alpha, batch, seq_len, gamma_max)
            })
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| b.report.speedup.total_cmp(&a.report.speedup));
        Ok(ranked)
    }

    /// Smallest acceptance rate that reaches `target_x` with some
    /// `gamma <= gamma_max`.
    pub fn min_acceptance(
        &self,
        draft: &DraftSpec,
        batch: u64,
        seq_len: u64,
        target_x: f64,
        gamma_max: u32,
    ) -> Result<MinAcceptance> {
        let t_target = self.target_time(batch, seq_len, 1)?;
        let d = draft_step_time(&self.hw, &self.target, draft, batch, seq_len, &self.cost)?;
        let verify = (1..=gamma_max.max(1))
            .map(|g| self.target_time(batch, seq_len, u64::from(g) + 1))
            .collect::<Result<Vec<_>>>()?;
        speedup::min_acceptance_for_speedup(
            t_target,
            d.t_draft_s,
            d.t_select_s,
            |g| verify[g as usize - 1],
            target_x,
            gamma_max,
        )
    }

    /// Smallest grid sequence length at which speedup at the largest batch
    /// is at least 1 and speedup does not fall between consecutive batch
    /// sizes.
    #[allow(clippy::too_many_arguments)]
    pub fn find_inflection(
        &self,
        draft: &DraftSpec,
        alpha: f64,
        batch_grid: &[u64],
        seq_grid: &[u64],
        gamma: u32,
    ) -> Result<InflectionResult> {
        check_grid("batch", batch_grid, 2)?;
        check_grid("sequence", seq_grid, 2)?;
        let mut grid = Vec::with_capacity(batch_grid.len() * seq_grid.len());
        let mut s_inflection = None;
        for &s in seq_grid {
            let row = batch_grid
                .iter()
                .map(|&b| self.analyze(draft, b, s, gamma, alpha).map(|r| r.speedup))
                .collect::<Result<Vec<_>>>()?;
            let non_decreasing = row.windows(2).all(|w| w[1] >= w[0]);
            if s_inflection.is_none() && non_decreasing && row[row.len() - 1] >= 1.0 {
                s_inflection = Some(s);
            }
            grid.extend(batch_grid.iter().zip(&row).map(|(&batch, &speedup)| GridCell {
                batch,
                seqlen: s,
                speedup,
            }));
        }
        Ok(InflectionResult {
            s_inflection,
            batch_grid: batch_grid.to_vec(),
            seq_grid: seq_grid.to_vec(),
            grid,
        })
    }

    /// One row per grid cell, sequence-major.
    pub fn sweep(
        &self,
        draft: &DraftSpec,
        alpha: f64,
        batch_grid: &[u64],
        seq_grid: &[u64],
        gamma: u32,
    ) -> Result<Vec<SweepRow>> {
        check_grid("batch", batch_grid, 1)?;
        check_grid("sequence", seq_grid, 1)?;
        let mut rows = Vec::with_capacity(batch_grid.len() * seq_grid.len());
        for &seqlen in seq_grid {
            for &batch in batch_grid {
                let report = self.analyze(draft, batch, seqlen, gamma, alpha)?;
                rows.push(SweepRow { batch, seqlen, report });
            }
        }
        Ok(rows)
    }
}

fn check_grid(name: &str, grid: &[u64], min_len: usize) -> Result<()> {
    if grid.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "{name} grid needs at least {min_len} point(s), got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{name} grid must be strictly ascending: {grid:?}")));
    }
    Ok(())
}

/// Orders inflection points with "not found" above every grid value.
pub fn inflection_key(s: Option<u64>) -> u128 {
    s.map_or(u128::MAX, u128::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drafting::{AcceptanceRow, KvPolicy, SearchCostModel};
    use crate::perf_model::CostMode;
    use crate::presets;
    use crate::speedup::{expected_gen_len, sd_avg_time, speedup_ratio};

    fn planner(mode: CostMode) -> Planner {
        Planner::new(presets::a100_x8(), presets::llama3_8b(), mode.into())
    }

    fn snap(k: u64) -> DraftSpec {
        DraftSpec::self_spec_static(k, "snapkv").unwrap()
    }

    fn table(rows: &[(&str, u64, f64)]) -> AcceptanceTable {
        AcceptanceTable::from_rows(
            rows.iter()
                .map(|&(m, k, a)| AcceptanceRow {
                    method: m.into(),
                    task: "pg19".into(),
                    kv_budget: k,
                    alpha: a,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_acceptance_is_overhead() {
        let p = planner(CostMode::Additive);
        for gamma in [1, 3, 8] {
            let r = p.analyze(&snap(512), 64, 8000, gamma, 0.0).unwrap();
            assert_eq!(r.omega, 1.0);
            assert!(r.speedup < 1.0);
        }
    }

    #[test]
    fn longer_context_helps_at_fixed_batch() {
        let p = planner(CostMode::Additive);
        let long = p.analyze(&snap(512), 32, 32000, 3, 0.8).unwrap();
        let short = p.analyze(&snap(512), 32, 4000, 3, 0.8).unwrap();
        assert!(long.speedup > short.speedup);
    }

    #[test]
    fn short_context_penalizes_large_batch() {
        let p = planner(CostMode::Additive);
        let small = p.analyze(&snap(512), 32, 1000, 3, 0.8).unwrap();
        let large = p.analyze(&snap(512), 256, 1000, 3, 0.8).unwrap();
        assert!(large.speedup < small.speedup);
    }

    #[test]
    fn analyze_matches_direct_composition() {
        let p = planner(CostMode::RooflineMax);
        let draft = DraftSpec::self_spec_dynamic(256, SearchCostModel::PqCache { fixed_s: 1e-4 }, "pq").unwrap();
        let r = p.analyze(&draft, 16, 20000, 4, 0.7).unwrap();
        let t = |n| p.cost.step_time(&p.hw, &p.target, 16, 20000, n).unwrap().total_s;
        let d = draft_step_time(&p.hw, &p.target, &draft, 16, 20000, &p.cost).unwrap();
        assert_eq!(r.t_target_s, t(1));
        assert_eq!(r.t_verify_s, t(5));
        assert_eq!(r.t_draft_s, d.t_draft_s);
        assert_eq!(r.t_select_s, d.t_select_s);
        assert!(r.t_select_s > 0.0);
    }

    #[test]
    fn gamma_star_at_zero_alpha_is_one() {
        let p = planner(CostMode::Additive);
        assert_eq!(p.optimize_gamma(&snap(512), 64, 32000, 0.0, 16).unwrap().0, 1);
    }

    #[test]
    fn gamma_star_at_high_alpha_with_cheap_draft_is_max() {
        let p = Planner::new(presets::a100_x8(), presets::llama3_70b(), CostModel::default());
        let draft = DraftSpec::external(presets::llama3_2_1b(), KvPolicy::StaticBudget { kv_budget: 64 }, "tiny").unwrap();
        assert_eq!(p.optimize_gamma(&draft, 4, 4000, 0.99, 16).unwrap().0, 16);
    }

    #[test]
    fn optimize_gamma_matches_brute_force() {
        let p = planner(CostMode::RooflineMax);
        for (b, s, alpha) in [(1, 2000, 0.5), (64, 16000, 0.8), (256, 100000, 0.9)] {
            let (g, best) = p.optimize_gamma(&snap(512), b, s, alpha, 12).unwrap();
            let all: Vec<f64> = (1..=12).map(|g| p.analyze(&snap(512), b, s, g, alpha).unwrap().speedup).collect();
            let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best.speedup, max);
            assert_eq!(g as usize, all.iter().position(|&x| x == max).unwrap() + 1);
            assert!(best.speedup >= all[0]);
        }
    }

    #[test]
    fn single_budget_is_returned() {
        let p = planner(CostMode::Additive);
        let plan = p
            .optimize_budget(&snap(1), "pg19", &[512], &table(&[("snapkv", 512, 0.8)]), 64, 8000, 4)
            .unwrap();
        assert_eq!(plan.best.kv_budget, Some(512));
        assert_eq!(plan.candidates.len(), 1);
    }

    #[test]
    fn equal_alpha_prefers_smaller_budget() {
        let p = planner(CostMode::Additive);
        let t = table(&[("snapkv", 256, 0.7), ("snapkv", 1024, 0.7)]);
        let plan = p.optimize_budget(&snap(1), "pg19", &[1024, 256], &t, 64, 8000, 8).unwrap();
        assert_eq!(plan.best.kv_budget, Some(256));
    }

    #[test]
    fn steep_acceptance_prefers_larger_budget_at_scale() {
        let p = planner(CostMode::Additive);
        let t = table(&[("snapkv", 256, 0.55), ("snapkv", 512, 0.80)]);
        let plan = p.optimize_budget(&snap(1), "pg19", &[256, 512], &t, 256, 64000, 16).unwrap();
        assert_eq!(plan.best.kv_budget, Some(512));
    }

    #[test]
    fn oversized_budgets_are_skipped() {
        let p = planner(CostMode::Additive);
        let t = table(&[("snapkv", 256, 0.6), ("snapkv", 4096, 0.9)]);
        let plan = p.optimize_budget(&snap(1), "pg19", &[256, 4096], &t, 8, 1000, 4).unwrap();
        assert_eq!(plan.skipped, vec![4096]);
        assert_eq!(plan.best.kv_budget, Some(256));
        let err = p.optimize_budget(&snap(1), "pg19", &[4096], &t, 8, 1000, 4).unwrap_err();
        assert!(matches!(err, Error::NoFeasibleBudget { context: 1000, .. }));
    }

    #[test]
    fn identical_drafts_keep_order() {
        let p = planner(CostMode::Additive);
        let t = table(&[("a", 512, 0.8), ("b", 512, 0.8)]);
        let drafts = [DraftSpec::self_spec_static(512, "a").unwrap(), DraftSpec::self_spec_static(512, "b").unwrap()];
        let ranked = p.compare_strategies(&drafts, &t, "pg19", 64, 8000, 8).unwrap();
        assert_eq!(ranked[0].report, ranked[1].report);
        assert_eq!(ranked[0].method_tag, "a");
    }

    #[test]
    fn static_beats_dynamic_at_equal_alpha() {
        let p = planner(CostMode::Additive);
        let t = table(&[("dyn", 512, 0.8), ("static", 512, 0.8)]);
        let drafts = [
            DraftSpec::self_spec_dynamic(512, SearchCostModel::PqCache { fixed_s: 0.0 }, "dyn").unwrap(),
            DraftSpec::self_spec_static(512, "static").unwrap(),
        ];
        let ranked = p.compare_strategies(&drafts, &t, "pg19", 64, 32000, 8).unwrap();
        assert_eq!(ranked[0].method_tag, "static");
        assert!(ranked[0].report.speedup > ranked[1].report.speedup);
    }

    #[test]
    fn search_cost_flips_ranking_at_large_batch() {
        let p = planner(CostMode::Additive);
        let t = table(&[("dyn", 512, 0.99), ("static", 512, 0.7)]);
        let drafts = [
            DraftSpec::self_spec_static(512, "static").unwrap(),
            DraftSpec::self_spec_dynamic(512, SearchCostModel::TopKOracle { fixed_s: 0.0 }, "dyn").unwrap(),
        ];
        let moderate = p.compare_strategies(&drafts, &t, "pg19", 4, 32000, 16).unwrap();
        assert_eq!(moderate[0].method_tag, "dyn");
        let large = p.compare_strategies(&drafts, &t, "pg19", 256, 32000, 16).unwrap();
        assert_eq!(large[0].method_tag, "static");
    }

    #[test]
    fn unknown_method_is_named() {
        let p = planner(CostMode::Additive);
        let t = table(&[("snapkv", 512, 0.8)]);
        let drafts = [DraftSpec::self_spec_static(512, "mystery").unwrap()];
        let err = p.compare_strategies(&drafts, &t, "pg19", 8, 8000, 4).unwrap_err().to_string();
        assert!(err.contains("mystery"), "{err}");
    }

    const BATCHES: [u64; 5] = [16, 32, 64, 128, 256];
    const SEQS: [u64; 9] = [1000, 2000, 4000, 8000, 16000, 32000, 64000, 128000, 256000];

    #[test]
    fn lower_bandwidth_never_raises_inflection() {
        for mode in [CostMode::Additive, CostMode::RooflineMax] {
            let p = planner(mode);
            let slow = Planner::new(p.hw.with_bandwidth_scaled(0.5).unwrap(), p.target.clone(), p.cost);
            let base = p.find_inflection(&snap(512), 0.8, &BATCHES, &SEQS, 3).unwrap();
            let halved = slow.find_inflection(&snap(512), 0.8, &BATCHES, &SEQS, 3).unwrap();
            assert!(base.s_inflection.is_some());
            assert!(inflection_key(halved.s_inflection) <= inflection_key(base.s_inflection));
        }
    }

    #[test]
    fn gqa_inflection_not_below_mha_twin() {
        for mode in [CostMode::Additive, CostMode::RooflineMax] {
            let gqa = planner(mode);
            let mha = Planner::new(gqa.hw.clone(), gqa.target.mha_twin(), gqa.cost);
            let a = gqa.find_inflection(&snap(512), 0.8, &BATCHES, &SEQS, 3).unwrap();
            let b = mha.find_inflection(&snap(512), 0.8, &BATCHES, &SEQS, 3).unwrap();
            assert!(inflection_key(a.s_inflection) >= inflection_key(b.s_inflection));
        }
    }

    #[test]
    fn inflection_grid_above_threshold_returns_first_point() {
        let p = planner(CostMode::Additive);
        let r = p.find_inflection(&snap(512), 0.8, &BATCHES, &[64000, 128000], 3).unwrap();
        assert_eq!(r.s_inflection, Some(64000));
        assert_eq!(r.grid.len(), 10);
    }

    #[test]
    fn tiny_contexts_have_no_inflection() {
        let p = planner(CostMode::Additive);
        let r = p.find_inflection(&snap(64), 0.8, &BATCHES, &[128, 256], 3).unwrap();
        assert_eq!(r.s_inflection, None);
    }

    #[test]
    fn inflection_rejects_bad_grids() {
        let p = planner(CostMode::Additive);
        assert!(p.find_inflection(&snap(64), 0.8, &[32], &[128, 256], 3).is_err());
        assert!(p.find_inflection(&snap(64), 0.8, &[64, 32], &[128, 256], 3).is_err());
    }

    #[test]
    fn sweep_single_cell_equals_analyze() {
        let p = planner(CostMode::Additive);
        let rows = p.sweep(&snap(512), 0.8, &[64], &[8000], 3).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].report, p.analyze(&snap(512), 64, 8000, 3, 0.8).unwrap());
    }

    #[test]
    fn sweep_order_and_invariants() {
        let p = planner(CostMode::Additive);
        let bs = [8, 32, 128, 256];
        let ss = [1000, 4000, 16000, 64000, 256000, 1000000];
        let rows = p.sweep(&snap(512), 0.8, &bs, &ss, 3).unwrap();
        assert_eq!(rows.len(), 24);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!((row.seqlen, row.batch), (ss[i / 4], bs[i % 4]));
            assert!(row.report.verify_ratio() >= 1.0);
            let r = row.report;
            let omega = expected_gen_len(r.gamma, r.alpha).unwrap();
            let x = speedup_ratio(r.t_target_s, sd_avg_time(r.t_draft_s, r.t_select_s, r.t_verify_s, r.gamma, omega).unwrap()).unwrap();
            assert!((x / r.speedup - 1.0).abs() <= 1e-12);
        }
        for b in bs {
            let col: Vec<_> = rows.iter().filter(|r| r.batch == b).map(|r| r.report).collect();
            assert!(col.windows(2).all(|w| w[1].draft_ratio() < w[0].draft_ratio()));
            assert!(col.windows(2).all(|w| w[1].verify_ratio() < w[0].verify_ratio()));
        }
        // As S grows only the attention terms survive: verification adds
        // gamma attention passes on top of one KV read.
        let arch = &p.target;
        let attn_per_kv = (arch.hidden_dim as f64 / (arch.num_kv_heads * arch.head_dim) as f64)
            * p.hw.aggregate_bandwidth()
            / p.hw.aggregate_flops();
        let limit = (1.0 + 4.0 * attn_per_kv) / (1.0 + attn_per_kv);
        let top = rows.last().unwrap().report;
        assert!(top.verify_ratio() > limit && top.verify_ratio() / limit - 1.0 < 0.01, "{} vs {limit}", top.verify_ratio());
    }

    #[test]
    fn sweep_budget_beyond_context_errors() {
        let p = planner(CostMode::Additive);
        assert!(p.sweep(&snap(512), 0.8, &[8], &[256], 3).is_err());
    }

    #[test]
    fn min_acceptance_round_trip() {
        let p = planner(CostMode::Additive);
        let m = p.min_acceptance(&snap(512), 128, 32000, 1.5, 16).unwrap();
        let alpha = m.alpha().unwrap();
        let (_, hit) = p.optimize_gamma(&snap(512), 128, 32000, alpha, 16).unwrap();
        assert!(hit.speedup >= 1.5 && hit.speedup - 1.5 < 1e-3);
        let (_, miss) = p.optimize_gamma(&snap(512), 128, 32000, alpha - 0.01, 16).unwrap();
        assert!(miss.speedup < 1.5);
    }
}
