//! Fusion spec (sources + oracle) and plan files, JSON.

use std::collections::BTreeMap;
use std::path::Path;

use lora_serve_core::fusion::{
    FusionError, FusionPlan, HeadSpec, KnowledgeSource, OracleModel, OracleNoise, SourceId, SyntheticOracle, TaskId,
};
use serde::{Deserialize, Serialize};

use super::{read_json, write_json, IoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFile {
    pub id: SourceId,
    pub task_id: TaskId,
    #[serde(default = "default_task_type")]
    pub task_type: String,
    pub requirement: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_classes: Option<usize>,
}

fn default_task_type() -> String {
    "generic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFile {
    pub seed: u64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyFile {
    pub task: TaskId,
    pub other: TaskId,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleFile {
    Decay {
        base: f64,
        slope: f64,
        #[serde(default)]
        slopes: BTreeMap<String, f64>,
        #[serde(default)]
        noise: Option<NoiseFile>,
    },
    Interference {
        base: f64,
        /// Per-task base accuracy keyed by task id (JSON object keys are
        /// strings).
        #[serde(default)]
        task_base: BTreeMap<String, f64>,
        #[serde(default)]
        penalties: Vec<PenaltyFile>,
        #[serde(default)]
        noise: Option<NoiseFile>,
    },
}

impl OracleFile {
    pub fn build(&self) -> Result<SyntheticOracle, FusionError> {
        let noise = |n: &Option<NoiseFile>| n.as_ref().map(|n| OracleNoise { seed: n.seed, amplitude: n.amplitude });
        match self {
            OracleFile::Decay { base, slope, slopes, noise: nz } => SyntheticOracle::new(
                OracleModel::Decay { base: *base, default_slope: *slope, slopes: slopes.clone() },
                noise(nz),
            ),
            OracleFile::Interference { base, task_base, penalties, noise: nz } => SyntheticOracle::new(
                OracleModel::Interference {
                    default_base: *base,
                    base: task_base
                        .iter()
                        .map(|(k, v)| k.parse::<TaskId>().map(|t| (t, *v)))
                        .collect::<Result<_, _>>()
                        .map_err(|_| FusionError::OracleSpec("task_base keys must be task ids"))?,
                    penalty: penalties.iter().map(|p| ((p.task, p.other), p.penalty)).collect(),
                },
                noise(nz),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpecFile {
    #[serde(default)]
    pub seed: u64,
    pub oracle: OracleFile,
    pub sources: Vec<SourceFile>,
}

impl FusionSpecFile {
    pub fn sources(&self) -> Vec<KnowledgeSource> {
        self.sources
            .iter()
            .map(|s| KnowledgeSource {
                id: s.id,
                task_id: s.task_id,
                task_type: s.task_type.clone(),
                requirement: s.requirement,
                head: s.head_classes.map(|classes| HeadSpec { classes }),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyFile {
    pub source: SourceId,
    pub task: TaskId,
    pub accuracy: f64,
    pub requirement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterFile {
    pub sources: Vec<SourceId>,
    pub accuracies: Vec<AccuracyFile>,
    pub task_head_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub seed: u64,
    pub order: Vec<SourceId>,
    pub rollbacks: usize,
    pub adapters: Vec<AdapterFile>,
}

impl PlanFile {
    pub fn from_plan(plan: &FusionPlan, seed: u64) -> Self {
        PlanFile {
            seed,
            order: plan.order.clone(),
            rollbacks: plan.rollbacks,
            adapters: plan
                .adapters
                .iter()
                .map(|a| AdapterFile {
                    sources: a.sources.clone(),
                    accuracies: a
                        .accuracies
                        .iter()
                        .map(|t| AccuracyFile {
                            source: t.source,
                            task: t.task,
                            accuracy: t.accuracy,
                            requirement: t.requirement,
                        })
                        .collect(),
                    task_head_classes: a.task_head.map(|h| h.classes),
                })
                .collect(),
        }
    }
}

pub fn load_fusion_spec(path: &Path) -> Result<FusionSpecFile, IoError> {
    read_json(path)
}

pub fn save_plan(path: &Path, plan: &FusionPlan, seed: u64) -> Result<(), IoError> {
    write_json(path, &PlanFile::from_plan(plan, seed))
}

pub fn load_plan(path: &Path) -> Result<PlanFile, IoError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lora_serve_core::fusion::fuse;

    const SPEC: &str = r#"{
        "seed": 3,
        "oracle": {"kind": "decay", "base": 1.0, "slope": 0.05},
        "sources": [
            {"id": 0, "task_id": 0, "requirement": 0.87},
            {"id": 1, "task_id": 1, "requirement": 0.87, "head_classes": 4},
            {"id": 2, "task_id": 2, "task_type": "video", "requirement": 0.87}
        ]
    }"#;

    #[test]
    fn spec_parses_and_fuses() {
        let spec: FusionSpecFile = serde_json::from_str(SPEC).unwrap();
        let src = spec.sources();
        assert_eq!(src[1].head, Some(HeadSpec { classes: 4 }));
        assert_eq!(src[2].task_type, "video");
        let plan = fuse(&src, &spec.oracle.build().unwrap(), spec.seed).unwrap();
        assert_eq!(plan.num_adapters(), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.json");
        save_plan(&p, &plan, 3).unwrap();
        let back = load_plan(&p).unwrap();
        assert_eq!(back, PlanFile::from_plan(&plan, 3));
    }

    #[test]
    fn interference_spec() {
        let text = r#"{"oracle": {"kind": "interference", "base": 0.9, "task_base": {"2": 0.95},
            "penalties": [{"task": 1, "other": 2, "penalty": 0.2}], "noise": {"seed": 1, "amplitude": 0.0}},
            "sources": [{"id": 5, "task_id": 1, "requirement": 0.8}, {"id": 6, "task_id": 2, "requirement": 0.8}]}"#;
        let spec: FusionSpecFile = serde_json::from_str(text).unwrap();
        let plan = fuse(&spec.sources(), &spec.oracle.build().unwrap(), spec.seed).unwrap();
        assert_eq!(plan.num_adapters(), 2);
    }

    #[test]
    fn malformed_specs() {
        assert!(serde_json::from_str::<FusionSpecFile>(r#"{"oracle": {"kind": "magic"}, "sources": []}"#).is_err());
        assert!(serde_json::from_str::<FusionSpecFile>(
            r#"{"oracle": {"kind": "decay", "base": 1, "slope": 0}, "sources": [{"id": 1}]}"#
        )
        .is_err());
        let spec: FusionSpecFile =
            serde_json::from_str(r#"{"oracle": {"kind": "decay", "base": 2.0, "slope": 0}, "sources": []}"#).unwrap();
        assert!(spec.oracle.build().is_err());
    }
}
