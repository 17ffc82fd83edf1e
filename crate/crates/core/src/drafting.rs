//! Drafting strategies, their per-step costs, and measured acceptance data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf_model::{CostModel, HardwareSpec, ModelArch};

/// Cost of a dynamic KV selection pass run once per draft step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum SearchCostModel {
    /// Product-quantized keys: 16 one-byte codes per KV head per token.
    PqCache {
        #[serde(default)]
        fixed_s: f64,
    },
    /// Exact top-k over the full key cache.
    TopKOracle {
        #[serde(default)]
        fixed_s: f64,
    },
    Custom {
        fixed_s: f64,
        /// Bytes per context token per layer, summed over KV heads.
        bytes_per_token_scanned: f64,
    },
}

pub const PQ_SUBVECTORS: u64 = 16;

impl SearchCostModel {
    pub fn label(&self) -> &'static str {
        match self {
            SearchCostModel::PqCache { .. } => "PQCache",
            SearchCostModel::TopKOracle { .. } => "TopKOracle",
            SearchCostModel::Custom { .. } => "Custom",
        }
    }

    pub fn fixed_s(&self) -> f64 {
        match *self {
            SearchCostModel::PqCache { fixed_s }
            | SearchCostModel::TopKOracle { fixed_s }
            | SearchCostModel::Custom { fixed_s, .. } => fixed_s,
        }
    }

    pub fn bytes_per_token_scanned(&self, arch: &ModelArch) -> f64 {
        match *self {
            SearchCostModel::PqCache { .. } => (arch.num_kv_heads * PQ_SUBVECTORS) as f64,
            SearchCostModel::TopKOracle { .. } => (arch.num_kv_heads * arch.head_dim * arch.dtype_bytes) as f64,
            SearchCostModel::Custom {
                bytes_per_token_scanned,
                ..
            } => bytes_per_token_scanned,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let valid = match *self {
            SearchCostModel::PqCache { fixed_s } | SearchCostModel::TopKOracle { fixed_s } => ok(fixed_s),
            SearchCostModel::Custom {
                fixed_s,
                bytes_per_token_scanned,
            } => ok(fixed_s) && ok(bytes_per_token_scanned),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidDraft("search cost fields must be finite and >= 0".into()))
        }
    }
}

/// KV cache kept by an external draft model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum KvPolicy {
    FullKv,
    StaticBudget { kv_budget: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DraftSpec {
    /// Target weights over a pre-gathered compressed KV cache of `kv_budget`
    /// tokens (StreamingLLM, SnapKV).
    SelfSpecStatic { kv_budget: u64, method_tag: String },
    /// Target weights over `kv_budget` tokens chosen per query by a search
    /// over the full cache.
    SelfSpecDynamic {
        kv_budget: u64,
        search: SearchCostModel,
        method_tag: String,
    },
    /// A separate, smaller model.
    ExternalDraft {
        arch: ModelArch,
        kv_policy: KvPolicy,
        method_tag: String,
    },
}

impl DraftSpec {
    pub fn self_spec_static(kv_budget: u64, method_tag: impl Into<String>) -> Result<Self> {
        let draft = DraftSpec::SelfSpecStatic {
            kv_budget,
            method_tag: method_tag.into(),
        };
        draft.validate()?;
        Ok(draft)
    }

    pub fn self_spec_dynamic(kv_budget: u64, search: SearchCostModel, method_tag: impl Into<String>) -> Result<Self> {
        let draft = DraftSpec::SelfSpecDynamic {
            kv_budget,
            search,
            method_tag: method_tag.into(),
        };
        draft.validate()?;
        Ok(draft)
    }

    pub fn external(arch: ModelArch, kv_policy: KvPolicy, method_tag: impl Into<String>) -> Result<Self> {
        let draft = DraftSpec::ExternalDraft {
            arch,
            kv_policy,
            method_tag: method_tag.into(),
        };
        draft.validate()?;
        Ok(draft)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let draft: DraftSpec = serde_json::from_str(text)?;
        draft.validate()?;
        Ok(draft)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kv_budget() == Some(0) {
            return Err(Error::InvalidDraft("kv_budget must be >= 1".into()));
        }
        if let DraftSpec::SelfSpecDynamic { search, .. } = self {
            search.validate()?;
        }
        Ok(())
    }

    pub fn method_tag(&self) -> &str {
        match self {
            DraftSpec::SelfSpecStatic { method_tag, .. }
            | DraftSpec::SelfSpecDynamic { method_tag, .. }
            | DraftSpec::ExternalDraft { method_tag, .. } => method_tag,
        }
    }

    /// Draft KV budget, `None` for a full-cache external draft.
    pub fn kv_budget(&self) -> Option<u64> {
        match self {
            DraftSpec::SelfSpecStatic { kv_budget, .. } | DraftSpec::SelfSpecDynamic { kv_budget, .. } => {
                Some(*kv_budget)
            }
            DraftSpec::ExternalDraft {
                kv_policy: KvPolicy::StaticBudget { kv_budget },
                ..
            } => Some(*kv_budget),
            DraftSpec::ExternalDraft {
                kv_policy: KvPolicy::FullKv,
                ..
            } => None,
        }
    }

    /// The same strategy with a different budget.
    pub fn with_budget(&self, budget: u64) -> Result<Self> {
        let mut draft = self.clone();
        match &mut draft {
            DraftSpec::SelfSpecStatic { kv_budget, .. }
            | DraftSpec::SelfSpecDynamic { kv_budget, .. }
            | DraftSpec::ExternalDraft {
                kv_policy: KvPolicy::StaticBudget { kv_budget },
                ..
            } => *kv_budget = budget,
            DraftSpec::ExternalDraft {
                kv_policy: KvPolicy::FullKv,
                ..
            } => {
                return Err(Error::InvalidDraft(
                    "a full-KV external draft has no budget to vary".into(),
                ))
            }
        }
        draft.validate()?;
        Ok(draft)
    }

    pub fn with_method_tag(&self, tag: &str) -> Self {
        let mut draft = self.clone();
        match &mut draft {
            DraftSpec::SelfSpecStatic { method_tag, .. }
            | DraftSpec::SelfSpecDynamic { method_tag, .. }
            | DraftSpec::ExternalDraft { method_tag, .. } => *method_tag = tag.to_string(),
        }
        draft
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self, DraftSpec::SelfSpecDynamic { .. })
    }
}

/// Time of one KV selection pass over `seq_len` cached tokens per sequence.
pub fn select_cost(search: &SearchCostModel, hw: &HardwareSpec, arch: &ModelArch, batch: u64, seq_len: u64) -> f64 {
    let scanned = batch as f64
        * seq_len as f64
        * arch.num_layers as f64
        * search.bytes_per_token_scanned(arch);
    search.fixed_s() + scanned / hw.aggregate_bandwidth()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DraftStepTime {
    pub t_draft_s: f64,
    pub t_select_s: f64,
}

impl DraftStepTime {
    pub fn total_s(&self) -> f64 {
        self.t_draft_s + self.t_select_s
    }
}

/// Cost of one draft step at context `seq_len`.
pub fn draft_step_time(
    hw: &HardwareSpec,
    target: &ModelArch,
    draft: &DraftSpec,
    batch: u64,
    seq_len: u64,
    cost: &CostModel,
) -> Result<DraftStepTime> {
    if let Some(budget) = draft.kv_budget() {
        if budget > seq_len {
            return Err(Error::BudgetExceedsContext {
                budget,
                context: seq_len,
            });
        }
    }
    match draft {
        DraftSpec::SelfSpecStatic { kv_budget, .. } => Ok(DraftStepTime {
            t_draft_s: cost.step_time(hw, target, batch, *kv_budget, 1)?.total_s,
            t_select_s: 0.0,
        }),
        DraftSpec::SelfSpecDynamic { kv_budget, search, .. } => Ok(DraftStepTime {
            t_draft_s: cost.step_time(hw, target, batch, *kv_budget, 1)?.total_s,
            t_select_s: select_cost(search, hw, target, batch, seq_len),
        }),
        DraftSpec::ExternalDraft { arch, kv_policy, .. } => {
            let context = match kv_policy {
                KvPolicy::FullKv => seq_len,
                KvPolicy::StaticBudget { kv_budget } => *kv_budget,
            };
            Ok(DraftStepTime {
                t_draft_s: cost.step_time(hw, arch, batch, context, 1)?.total_s,
                t_select_s: 0.0,
            })
        }
    }
}

pub const ACCEPTANCE_HEADER: [&str; 4] = ["method", "task", "kv_budget", "alpha"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    pub method: String,
    pub task: String,
    pub kv_budget: u64,
    pub alpha: f64,
}

/// Measured acceptance rates keyed by (method, task, budget).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcceptanceTable {
    rows: Vec<AcceptanceRow>,
    // (method, task) -> (budget, alpha) sorted by budget
    groups: BTreeMap<(String, String), Vec<(u64, f64)>>,
}

impl AcceptanceTable {
    pub fn from_rows(rows: Vec<AcceptanceRow>) -> Result<Self> {
        let mut table = AcceptanceTable::default();
        for (i, row) in rows.into_iter().enumerate() {
            table.push(row).map_err(|message| Error::Table {
                path: "<rows>".into(),
                line: i as u64 + 1,
                message,
            })?;
        }
        Ok(table)
    }

    fn push(&mut self, row: AcceptanceRow) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&row.alpha) {
            return Err(format!("alpha {} outside [0, 1]", row.alpha));
        }
        if row.kv_budget == 0 {
            return Err("kv_budget must be a positive integer".into());
        }
        let group = self
            .groups
            .entry((row.method.clone(), row.task.clone()))
            .or_default();
        match group.binary_search_by_key(&row.kv_budget, |(b, _)| *b) {
            Ok(_) => {
                return Err(format!(
                    "duplicate entry for ({}, {}, {})",
                    row.method, row.task, row.kv_budget
                ))
            }
            Err(pos) => group.insert(pos, (row.kv_budget, row.alpha)),
        }
        self.rows.push(row);
        Ok(())
    }

    /// Parses `method,task,kv_budget,alpha` CSV. `source` names the input in
    /// diagnostics.
    pub fn from_reader(reader: impl Read, source: &str) -> Result<Self> {
        let table_err = |line: u64, message: String| Error::Table {
            path: source.to_string(),
            line,
            message,
        };
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers()?.clone();
        if header.iter().ne(ACCEPTANCE_HEADER.iter().copied()) {
            return Err(table_err(
                1,
                format!(
                    "expected header `{}`, found `{}`",
                    ACCEPTANCE_HEADER.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        let mut table = AcceptanceTable::default();
        for record in csv.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                table_err(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row: AcceptanceRow = record
                .deserialize(Some(&header))
                .map_err(|e| table_err(line, e.to_string()))?;
            table.push(row).map_err(|m| table_err(line, m))?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn rows(&self) -> &[AcceptanceRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &str)> {
        self.groups.keys().map(|(m, t)| (m.as_str(), t.as_str()))
    }

    /// Acceptance rate at `budget`, interpolated linearly between measured
    /// budgets and clamped to the end points.
    pub fn lookup_alpha(&self, method: &str, task: &str, budget: u64) -> Result<f64> {
        let points = self
            .groups
            .get(&(method.to_string(), task.to_string()))
            .ok_or_else(|| Error::UnknownGroup {
                method: method.into(),
                task: task.into(),
                available: self
                    .groups()
                    .map(|(m, t)| format!("{m}/{t}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            })?;
        let first = points[0];
        let last = points[points.len() - 1];
        if budget <= first.0 {
            return Ok(first.1);
        }
        if budget >= last.0 {
            return Ok(last.1);
        }
        let upper = points.partition_point(|(b, _)| *b < budget);
        let (b1, a1) = points[upper];
        if b1 == budget {
            return Ok(a1);
        }
        let (b0, a0) = points[upper - 1];
        let t = (budget - b0) as f64 / (b1 - b0) as f64;
        Ok(a0 + t * (a1 - a0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf_model::{decode_step_time, CostMode, HardwareConfig};
    use crate::presets;

    fn table(text: &str) -> Result<AcceptanceTable> {
        AcceptanceTable::from_reader(text.as_bytes(), "test.csv")
    }

    fn synthetic_hw() -> HardwareSpec {
        HardwareSpec::new(HardwareConfig {
            name: "synthetic".into(),
            peak_flops: 1e12,
            mem_bandwidth_bytes: 1e12,
            device_mem_bytes: 80e9,
            num_devices: 1,
            tp_efficiency: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn header_only_is_empty() {
        assert!(table("method,task,kv_budget,alpha\n").unwrap().is_empty());
    }

    #[test]
    fn single_row_echo() {
        let t = table("method,task,kv_budget,alpha\nsnapkv,pg19,512,0.83\n").unwrap();
        assert_eq!(
            t.rows(),
            &[AcceptanceRow {
                method: "snapkv".into(),
                task: "pg19".into(),
                kv_budget: 512,
                alpha: 0.83
            }]
        );
    }

    #[test]
    fn bad_alpha_names_line() {
        let err = table("method,task,kv_budget,alpha\na,b,256,0.5\nsnapkv,pg19,512,1.2\n").unwrap_err();
        assert!(matches!(err, Error::Table { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_rows_name_line() {
        let err = table("method,task,kv_budget,alpha\nsnapkv,pg19,abc,0.5\n").unwrap_err();
        assert!(matches!(err, Error::Table { line: 2, .. }), "{err}");
        let err = table("method,task,kv_budget,alpha\nsnapkv,pg19,0,0.5\n").unwrap_err();
        assert!(matches!(err, Error::Table { line: 2, .. }), "{err}");
        let err = table("method,task,kv_budget,alpha\nsnapkv,pg19,512\n").unwrap_err();
        assert!(matches!(err, Error::Table { line: 2, .. }), "{err}");
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(table("method,task,budget,alpha\n").is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let err = table("method,task,kv_budget,alpha\ns,t,512,0.5\ns,t,512,0.6\n").unwrap_err();
        assert!(matches!(err, Error::Table { line: 3, .. }), "{err}");
        // same budget in another group is fine
        table("method,task,kv_budget,alpha\ns,t,512,0.5\ns,u,512,0.6\n").unwrap();
    }

    #[test]
    fn lookup_interpolates_and_clamps() {
        let t = table("method,task,kv_budget,alpha\ns,t,512,0.9\ns,t,256,0.7\n").unwrap();
        assert_eq!(t.lookup_alpha("s", "t", 512).unwrap(), 0.9);
        assert!((t.lookup_alpha("s", "t", 384).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(t.lookup_alpha("s", "t", 1024).unwrap(), 0.9);
        assert_eq!(t.lookup_alpha("s", "t", 1).unwrap(), 0.7);
    }

    #[test]
    fn unknown_group_lists_available() {
        let t = table("method,task,kv_budget,alpha\nsnapkv,pg19,512,0.9\n").unwrap();
        let err = t.lookup_alpha("pqcache", "pg19", 512).unwrap_err().to_string();
        assert!(err.contains("pqcache") && err.contains("snapkv/pg19"), "{err}");
    }

    #[test]
    fn top_k_select_cost_reference() {
        let search = SearchCostModel::TopKOracle { fixed_s: 0.0 };
        let t = select_cost(&search, &synthetic_hw(), &presets::llama3_8b(), 64, 32000);
        // 64 * 32000 * 32 * (8 * 128 * 2) / 1e12
        assert!((t - 0.134_217_728).abs() < 1e-12, "{t}");
    }

    #[test]
    fn pq_scans_sixteen_times_fewer_bytes() {
        let arch = presets::llama3_8b();
        assert_eq!(arch.head_dim * arch.dtype_bytes, 256);
        let pq = SearchCostModel::PqCache { fixed_s: 0.0 }.bytes_per_token_scanned(&arch);
        let topk = SearchCostModel::TopKOracle { fixed_s: 0.0 }.bytes_per_token_scanned(&arch);
        assert_eq!(topk, 16.0 * pq);
    }

    #[test]
    fn static_draft_has_no_selection_and_ignores_context() {
        let hw = presets::a100_x8();
        let arch = presets::llama3_8b();
        let draft = DraftSpec::self_spec_static(512, "streamingllm").unwrap();
        let cost = CostModel::default();
        let a = draft_step_time(&hw, &arch, &draft, 64, 4000, &cost).unwrap();
        let b = draft_step_time(&hw, &arch, &draft, 64, 64000, &cost).unwrap();
        assert_eq!(a.t_select_s, 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn uncompressed_self_spec_equals_target() {
        let hw = presets::a100_x8();
        let arch = presets::llama3_8b();
        let draft = DraftSpec::self_spec_static(8000, "none").unwrap();
        let d = draft_step_time(&hw, &arch, &draft, 32, 8000, &CostModel::default()).unwrap();
        let t = decode_step_time(&hw, &arch, 32, 8000, 1, CostMode::Additive).unwrap();
        assert_eq!(d.t_draft_s, t.total_s);
    }

    #[test]
    fn budget_beyond_context_is_an_error() {
        let hw = presets::a100_x8();
        let arch = presets::llama3_8b();
        let draft = DraftSpec::self_spec_static(512, "s").unwrap();
        let err = draft_step_time(&hw, &arch, &draft, 1, 256, &CostModel::default()).unwrap_err();
        assert!(matches!(err, Error::BudgetExceedsContext { budget: 512, context: 256 }));
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(DraftSpec::self_spec_static(0, "s").is_err());
        assert!(DraftSpec::from_json(r#"{"kind":"self_spec_static","kv_budget":0,"method_tag":"s"}"#).is_err());
    }

    #[test]
    fn draft_json_forms() {
        let d = DraftSpec::from_json(
            r#"{"kind":"self_spec_dynamic","kv_budget":512,"method_tag":"pqcache","search":{"preset":"pq_cache"}}"#,
        )
        .unwrap();
        assert!(d.is_dynamic());
        assert_eq!(d.kv_budget(), Some(512));
        let d = DraftSpec::from_json(
            r#"{"kind":"external_draft","method_tag":"tiny","kv_policy":{"policy":"full_kv"},
                "arch":{"name":"t","num_layers":22,"hidden_dim":2048,"num_heads":32,"num_kv_heads":4,
                "head_dim":64,"intermediate_dim":5632,"vocab_size":32000,"dtype_bytes":2}}"#,
        )
        .unwrap();
        assert_eq!(d.kv_budget(), None);
        assert!(d.with_budget(128).is_err());
        let err = DraftSpec::from_json(r#"{"kind":"self_spec_static","kv_budget":5,"method_tag":"s","extra":1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("extra"), "{err}");
    }
}
