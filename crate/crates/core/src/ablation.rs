//! Named experiment grids: corrupted-prediction task configurations and
//! corruption-ratio settings.

use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionConfig;
use crate::losses::{TaskWeights, WithinModal};
use crate::{Error, Result};

/// Groups a task configuration belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFamily {
    /// Corrupted prediction of any kind.
    pub crl: bool,
    /// Multimodal-input corrupted prediction (mACP / mVCP).
    pub mmtl: bool,
    /// Unimodal-input corrupted prediction (ACP / VCP).
    pub umtl: bool,
}

/// One row of the task grid: a label, its family flags and the weights that
/// realize it. Masked prediction is active in every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub label: String,
    pub family: TaskFamily,
    pub weights: TaskWeights,
}

impl TaskRow {
    /// Filesystem-safe name.
    pub fn slug(&self) -> String {
        let s: String = self
            .label
            .chars()
            .map(|c| match c {
                'a'..='z' | 'A'..='Z' | '0'..='9' => c.to_ascii_lowercase(),
                '+' => '-',
                _ => '_',
            })
            .collect();
        s.split(['_', '-'])
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Masked prediction only: the reference configuration the grid is compared
/// against.
pub fn masked_only_row() -> TaskRow {
    TaskRow {
        label: "MASK+MLM".into(),
        family: TaskFamily { crl: false, mmtl: false, umtl: false },
        weights: TaskWeights::masked_only(),
    }
}

/// The twelve corrupted-prediction task configurations.
pub fn task_grid() -> Vec<TaskRow> {
    let base = TaskWeights::masked_only();
    let row = |label: &str, mmtl: bool, umtl: bool, w: TaskWeights| TaskRow {
        label: label.into(),
        family: TaskFamily { crl: true, mmtl, umtl },
        weights: w,
    };
    let within = |acp, vcp, macp, mvcp| WithinModal { acp, vcp, macp, mvcp };
    vec![
        row("AVCP", false, false, TaskWeights { lambda_avcp: 1.0, ..base.clone() }),
        row("mACP+mVCP", true, false, TaskWeights { lambda_macp: 1.0, lambda_mvcp: 1.0, ..base.clone() }),
        row(
            "mACP(w)+mVCP(w)",
            true,
            false,
            TaskWeights {
                lambda_macp: 1.0,
                lambda_mvcp: 1.0,
                within_modal: within(false, false, true, true),
                ..base.clone()
            },
        ),
        row(
            "mACP+mVCP+AVCP",
            true,
            false,
            TaskWeights { lambda_macp: 1.0, lambda_mvcp: 1.0, lambda_avcp: 1.0, ..base.clone() },
        ),
        row("ACP+VCP", false, true, TaskWeights::default()),
        row(
            "ACP(w)+VCP(w)",
            false,
            true,
            TaskWeights { within_modal: within(true, true, false, false), ..TaskWeights::default() },
        ),
        row("ACP+VCP+ACP(w)", false, true, TaskWeights { lambda_acp_w: 1.0, ..TaskWeights::default() }),
        row("ACP+VCP+VCP(w)", false, true, TaskWeights { lambda_vcp_w: 1.0, ..TaskWeights::default() }),
        row(
            "ACP+VCP+ACP(w)+VCP(w)",
            false,
            true,
            TaskWeights { lambda_acp_w: 1.0, lambda_vcp_w: 1.0, ..TaskWeights::default() },
        ),
        row("ACP+VCP+AVCP", false, true, TaskWeights { lambda_avcp: 1.0, ..TaskWeights::default() }),
        row(
            "mACP+mVCP+ACP+VCP",
            true,
            true,
            TaskWeights { lambda_macp: 1.0, lambda_mvcp: 1.0, ..TaskWeights::default() },
        ),
        row(
            "mACP(w)+mVCP(w)+ACP(w)+VCP(w)",
            true,
            true,
            TaskWeights {
                lambda_macp: 1.0,
                lambda_mvcp: 1.0,
                within_modal: within(true, true, true, true),
                ..TaskWeights::default()
            },
        ),
    ]
}

/// One corruption-ratio setting: visual and audio ratio ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub label: String,
    pub visual: [f64; 2],
    pub audio: [f64; 2],
}

impl RatioRow {
    pub fn apply(&self, base: &CorruptionConfig) -> CorruptionConfig {
        CorruptionConfig {
            visual_ratio_range: self.visual,
            audio_ratio_range: self.audio,
            ..base.clone()
        }
    }
}

/// Sampled ranges (the default) followed by four fixed-ratio settings.
pub fn ratio_grid() -> Vec<RatioRow> {
    let row = |label: &str, v: [f64; 2], a: [f64; 2]| RatioRow { label: label.into(), visual: v, audio: a };
    vec![
        row("v0.1-0.5_a0.3-0.5", [0.1, 0.5], [0.3, 0.5]),
        row("v0.1_a0.3", [0.1, 0.1], [0.3, 0.3]),
        row("v0.3_a0.5", [0.3, 0.3], [0.5, 0.5]),
        row("v0.5_a0.7", [0.5, 0.5], [0.7, 0.7]),
        row("v0.7_a0.9", [0.7, 0.7], [0.9, 0.9]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    #[default]
    Tasks,
    Ratios,
}

/// Settings of the ablation runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub grid: Grid,
    /// Uptrain steps per grid cell.
    pub uptrain_steps: usize,
    /// Fine-tune steps per grid cell; 0 skips fine-tuning and evaluation.
    pub finetune_steps: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            grid: Grid::Tasks,
            uptrain_steps: 200,
            finetune_steps: 0,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.uptrain_steps < 2 {
            return Err(Error::Config("ablate.uptrain_steps must be ≥ 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;
    use std::collections::BTreeSet;

    #[test]
    fn twelve_distinct_rows() {
        let rows = task_grid();
        assert_eq!(rows.len(), 12);
        let active: BTreeSet<Vec<Task>> = rows.iter().map(|r| r.weights.active()).collect();
        assert_eq!(active.len(), 12);
        let slugs: BTreeSet<String> = rows.iter().map(TaskRow::slug).collect();
        assert_eq!(slugs.len(), 12);
        assert!(!active.contains(&masked_only_row().weights.active()));
    }

    #[test]
    fn every_row_keeps_masked_prediction() {
        for r in task_grid() {
            let a = r.weights.active();
            assert!(a.contains(&Task::Mask) && a.contains(&Task::Mlm), "{}", r.label);
            r.weights.validate().unwrap();
        }
    }

    #[test]
    fn within_rows_use_within_tasks() {
        let rows = task_grid();
        let find = |l: &str| rows.iter().find(|r| r.label == l).unwrap().weights.active();
        assert_eq!(find("ACP(w)+VCP(w)"), vec![Task::Mask, Task::Mlm, Task::AcpW, Task::VcpW]);
        assert_eq!(find("ACP+VCP"), vec![Task::Mask, Task::Acp, Task::Vcp, Task::Mlm]);
        let all_w = find("mACP(w)+mVCP(w)+ACP(w)+VCP(w)");
        assert!(all_w.iter().all(|t| matches!(t, Task::Mask | Task::Mlm | Task::AcpW | Task::VcpW | Task::MacpW | Task::MvcpW)));
        assert_eq!(all_w.len(), 6);
    }

    #[test]
    fn slug_is_path_safe() {
        let r = &task_grid()[2];
        assert_eq!(r.slug(), "macp-w-mvcp-w");
    }

    #[test]
    fn ratio_rows_validate() {
        let rows = ratio_grid();
        assert_eq!(rows.len(), 5);
        for r in rows {
            r.apply(&CorruptionConfig::default()).validate().unwrap();
        }
    }
}
