use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gnn::{Backbone, BackboneKind, Hyper, Task};
use crate::graph::{Perturbation, RequestKind, SbmParams, SplitMode, Targets};
use crate::unlearn::{DeleteOptions, InfluenceOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Retrain,
    Eraser,
    Gif,
    Ceu,
    Gnndelete,
    Utu,
    Projector,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Retrain,
        Method::Eraser,
        Method::Gif,
        Method::Ceu,
        Method::Gnndelete,
        Method::Utu,
        Method::Projector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::Eraser => "eraser",
            Method::Gif => "gif",
            Method::Ceu => "ceu",
            Method::Gnndelete => "gnndelete",
            Method::Utu => "utu",
            Method::Projector => "projector",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::UnknownMethod {
                name: name.to_string(),
                supported: Method::ALL.map(Method::name).join(", "),
            })
    }
}

/// Parameters of a synthetic graph-classification collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSetParams {
    pub count: usize,
    pub nodes_per_graph: usize,
    pub num_classes: usize,
    pub p_edge: f64,
    pub features: usize,
    pub signal: f64,
}

impl Default for GraphSetParams {
    fn default() -> Self {
        Self {
            count: 120,
            nodes_per_graph: 12,
            num_classes: 2,
            p_edge: 0.25,
            features: 8,
            signal: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Dataset {
    /// Stochastic block model graph.
    Synthetic(SbmParams),
    /// Random graph collection for graph classification.
    Graphs(GraphSetParams),
    /// Directory with `nodes.csv` and `edges.csv`; relative paths resolve
    /// against the data directory.
    Dir(PathBuf),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DatasetRepr {
    Name(String),
    Spec(Dataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub kind: RequestKind,
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Targets>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRequest {
    kind: Option<RequestKind>,
    ratio: Option<f64>,
    targets: Option<Targets>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub ratio: f64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            mode: SplitMode::Transductive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attack {
    /// Membership inference on node predictions.
    Mia,
    /// Heterophilic edge poisoning, unlearned afterwards.
    Poison,
}

/// Which nodes the membership attack treats as members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MiaMembers {
    /// The nodes named by the unlearning request.
    #[default]
    Unlearned,
    /// All retained training nodes.
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Request ratio.
    Ratio,
    /// Perturbation level.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub levels: Vec<f64>,
    /// Perturbation family for noise sweeps; label noise when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

/// A validated experiment description with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub backbone: Backbone,
    pub hyper: Hyper,
    pub task: Task,
    pub method: Method,
    pub request: RequestSpec,
    pub split: SplitSpec,
    pub attacks: Vec<Attack>,
    pub mia_members: MiaMembers,
    pub perturbation: Option<Perturbation>,
    pub influence: InfluenceOptions,
    pub gnndelete: DeleteOptions,
    pub shards: usize,
    pub poison_ratio: f64,
    pub sweeps: Vec<SweepSpec>,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    dataset: Option<DatasetRepr>,
    #[serde(default)]
    backbone: Option<Backbone>,
    #[serde(default)]
    hyper: Option<Hyper>,
    task: Task,
    method: String,
    #[serde(default)]
    request: RawRequest,
    #[serde(default)]
    split: SplitSpec,
    #[serde(default)]
    attacks: Vec<Attack>,
    #[serde(default)]
    mia_members: MiaMembers,
    #[serde(default)]
    perturbation: Option<Perturbation>,
    #[serde(default)]
    influence: InfluenceOptions,
    #[serde(default)]
    gnndelete: DeleteOptions,
    #[serde(default)]
    shards: Option<usize>,
    #[serde(default)]
    poison_ratio: Option<f64>,
    #[serde(default)]
    sweeps: Vec<SweepSpec>,
    seed: u64,
}

/// Default architecture per task.
pub fn default_backbone(task: Task) -> Backbone {
    match task {
        Task::Node | Task::Link => Backbone::new(BackboneKind::Sgc, 2),
        Task::Graph => Backbone::new(BackboneKind::Gcn, 2),
    }
}

/// Default optimizer settings per task.
pub fn default_hyper(task: Task) -> Hyper {
    match task {
        Task::Node => Hyper::default(),
        Task::Link => Hyper {
            lr: 0.1,
            epochs: 300,
            ..Hyper::default()
        },
        Task::Graph => Hyper {
            lr: 0.2,
            epochs: 150,
            ..Hyper::default()
        },
    }
}

fn check_ratio(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidRatio(x))
    }
}

fn unsupported(msg: String) -> Error {
    Error::UnsupportedCombination(msg)
}

impl ExperimentConfig {
    fn from_raw(raw: RawConfig) -> Result<Self> {
        let method = Method::parse(&raw.method)?;
        let task = raw.task;
        let dataset = match raw.dataset {
            None => None,
            Some(DatasetRepr::Spec(d)) => Some(d),
            Some(DatasetRepr::Name(name)) if name == "synthetic" => None,
            Some(DatasetRepr::Name(name)) => {
                return Err(Error::Parse(format!(
                    "unknown dataset {name:?}; use \"synthetic\" or an object"
                )))
            }
        }
        .unwrap_or(match task {
            Task::Graph => Dataset::Graphs(GraphSetParams::default()),
            Task::Node | Task::Link => Dataset::Synthetic(SbmParams::default()),
        });
        let request = RequestSpec {
            kind: raw.request.kind.unwrap_or(match task {
                Task::Graph => RequestKind::Feature,
                Task::Node | Task::Link => RequestKind::Node,
            }),
            ratio: raw.request.ratio.unwrap_or(0.10),
            targets: raw.request.targets,
        };
        let cfg = ExperimentConfig {
            dataset,
            backbone: raw.backbone.unwrap_or(default_backbone(task)),
            hyper: raw.hyper.unwrap_or(default_hyper(task)),
            task,
            method,
            request,
            split: raw.split,
            attacks: raw.attacks,
            mia_members: raw.mia_members,
            perturbation: raw.perturbation,
            influence: raw.influence,
            gnndelete: raw.gnndelete,
            shards: raw.shards.unwrap_or(4),
            poison_ratio: raw.poison_ratio.unwrap_or(0.10),
            sweeps: raw.sweeps,
            seed: raw.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks ranges and the supported method/task/request matrix.
    pub fn validate(&self) -> Result<()> {
        check_ratio(self.split.ratio)?;
        check_ratio(self.request.ratio)?;
        check_ratio(self.poison_ratio)?;
        if self.shards == 0 {
            return Err(Error::InvalidK { k: 0, n_train: 0 });
        }
        let kind = self.request.kind;
        if let Some(t) = &self.request.targets {
            let level = match t {
                Targets::Nodes(_) => RequestKind::Node,
                Targets::Edges(_) => RequestKind::Edge,
                Targets::Features(_) => RequestKind::Feature,
            };
            if level != kind {
                return Err(Error::KindMismatch {
                    expected: kind.name(),
                    got: level.name(),
                });
            }
        }
        let (m, task) = (self.method, self.task);
        let combo = || format!("method {} with {} request on {} task", m.name(), kind.name(), task.name());
        match (task, &self.dataset) {
            (Task::Graph, Dataset::Graphs(_)) => {}
            (Task::Graph, _) => return Err(unsupported("graph task needs a graph collection dataset".into())),
            (_, Dataset::Graphs(_)) => {
                return Err(unsupported(format!("{} task needs a single-graph dataset", task.name())))
            }
            _ => {}
        }
        let ok = match task {
            Task::Graph => {
                kind == RequestKind::Feature && matches!(m, Method::Retrain | Method::Eraser | Method::Gif)
            }
            Task::Node | Task::Link => match m {
                Method::Retrain | Method::Eraser | Method::Gif | Method::Utu => true,
                Method::Ceu => kind == RequestKind::Edge,
                Method::Gnndelete => kind != RequestKind::Feature,
                Method::Projector => {
                    kind == RequestKind::Node && task == Task::Node && self.backbone.kind == BackboneKind::Sgc
                }
            },
        };
        if !ok {
            return Err(unsupported(combo()));
        }
        for attack in &self.attacks {
            match attack {
                Attack::Mia if task != Task::Node => {
                    return Err(unsupported(format!("mia attack on {} task (defined for node task)", task.name())))
                }
                Attack::Mia if self.mia_members == MiaMembers::Unlearned && kind != RequestKind::Node => {
                    return Err(unsupported("mia with unlearned members needs a node request".into()))
                }
                Attack::Poison if task != Task::Link || kind != RequestKind::Edge => {
                    return Err(unsupported("poison attack needs a link task with edge requests".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Resolves a relative dataset directory against `data_dir`.
    pub fn dataset_dir(&self, data_dir: Option<&Path>) -> Option<PathBuf> {
        match &self.dataset {
            Dataset::Dir(p) if p.is_relative() => Some(data_dir.map_or(p.clone(), |d| d.join(p))),
            Dataset::Dir(p) => Some(p.clone()),
            _ => None,
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    ExperimentConfig::from_raw(raw)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
