//! Experiment configuration: a flat JSON object whose keys mirror the CLI
//! flags. Absent keys take per-kind defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escape::StepRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EscapeSearch,
    Trajectory,
    RankProfile,
    ExtendDepth,
    Counterexample,
    MnistTrain,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::EscapeSearch,
        ExperimentKind::Trajectory,
        ExperimentKind::RankProfile,
        ExperimentKind::ExtendDepth,
        ExperimentKind::Counterexample,
        ExperimentKind::MnistTrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::EscapeSearch => "escape-search",
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::RankProfile => "rank-profile",
            ExperimentKind::ExtendDepth => "extend-depth",
            ExperimentKind::Counterexample => "counterexample",
            ExperimentKind::MnistTrain => "mnist-train",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    /// `circle_n` points on the unit circle with alternating loss gradients.
    Circle,
    /// Image/label IDX pair, normalized; `G` is the cross-entropy gradient at
    /// zero output.
    Idx,
    /// Gaussian inputs and loss gradients drawn from the seed.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryStart {
    /// The rank-two escape direction on the circle dataset.
    Counterexample,
    /// A standard Gaussian point projected to the radius-`√L` sphere.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockChoice {
    T,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRuleChoice {
    Fixed,
    Backtrack,
}

impl From<StepRuleChoice> for StepRule {
    fn from(c: StepRuleChoice) -> Self {
        match c {
            StepRuleChoice::Fixed => StepRule::Fixed,
            StepRuleChoice::Backtrack => StepRule::Backtrack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub depth: usize,
    /// Hidden widths to sweep (escape search) or the single hidden width.
    pub widths: Vec<usize>,
    pub init_sigma: f64,
    pub steps: usize,
    pub step_size: f64,
    pub step_rule: StepRuleChoice,
    pub restarts: usize,
    pub seed: u64,
    /// Success threshold for the escape-search fraction.
    pub threshold: f64,

    pub dataset: DatasetSource,
    pub circle_n: usize,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub subset_size: usize,
    pub synthetic_n: usize,
    pub synthetic_d_in: usize,
    pub synthetic_d_out: usize,

    pub start: TrajectoryStart,
    /// Starting norm of the trajectory; `None` is the escape radius `√L`.
    pub start_norm: Option<f64>,
    pub clock: ClockChoice,
    /// Integrator step (`dt` or `ds`).
    pub dt: f64,
    pub snapshot_every: usize,

    pub extend_max: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr_numerator: f64,
    pub lr_clamp: Option<f64>,
    /// Training stops at the first logged loss this far below the initial one.
    pub stop_after_drop: Option<f64>,
    /// Logging cadence in steps (training) or CSV row cadence (trajectory).
    pub log_every: usize,

    pub out_dir: PathBuf,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::defaults(ExperimentKind::EscapeSearch)
    }
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            depth: 3,
            widths: vec![4, 8, 16, 32],
            init_sigma: 1e-3,
            steps: 5000,
            step_size: crate::escape::DEFAULT_STEP_SIZE,
            step_rule: StepRuleChoice::Fixed,
            restarts: 20,
            seed: 0,
            threshold: std::f64::consts::SQRT_2 - 1.0,
            dataset: DatasetSource::Circle,
            circle_n: 8,
            idx_images: None,
            idx_labels: None,
            subset_size: 1000,
            synthetic_n: 16,
            synthetic_d_in: 3,
            synthetic_d_out: 2,
            start: TrajectoryStart::Counterexample,
            start_norm: None,
            clock: ClockChoice::T,
            dt: crate::dynamics::DEFAULT_DT,
            snapshot_every: 0,
            extend_max: 3,
            epochs: 200,
            batch_size: 32,
            lr_numerator: 10.0,
            lr_clamp: Some(10.0),
            stop_after_drop: None,
            log_every: 32,
            out_dir: PathBuf::from("out"),
            svg: false,
        };
        match kind {
            ExperimentKind::Trajectory => Self {
                widths: vec![4],
                dt: 1e-5,
                steps: 180_000,
                log_every: 1000,
                ..base
            },
            ExperimentKind::RankProfile => Self {
                widths: vec![16],
                restarts: 8,
                ..base
            },
            ExperimentKind::ExtendDepth | ExperimentKind::Counterexample => Self {
                widths: vec![4],
                ..base
            },
            ExperimentKind::MnistTrain => Self {
                depth: 6,
                widths: vec![64],
                dataset: DatasetSource::Idx,
                idx_images: Some(PathBuf::from("data/mnist-1k/train-images-idx3-ubyte")),
                idx_labels: Some(PathBuf::from("data/mnist-1k/train-labels-idx1-ubyte")),
                epochs: 5000,
                lr_clamp: None,
                log_every: 320,
                ..base
            },
            ExperimentKind::EscapeSearch => base,
        }
    }

    /// Parse a config file; `kind` in the file must agree with `expected`
    /// when both are given. Missing keys fall back to that kind's defaults.
    pub fn from_json(text: &str, expected: Option<ExperimentKind>) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let file_kind = match obj.get("kind") {
            Some(k) => Some(
                serde_json::from_value::<ExperimentKind>(k.clone())
                    .map_err(|e| Error::Config(format!("kind: {e}")))?,
            ),
            None => None,
        };
        let kind = match (file_kind, expected) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("config is for {a}, not {b}")))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("no experiment kind given".into())),
        };
        let mut merged = serde_json::to_value(Self::defaults(kind)).expect("config serializes");
        let target = merged.as_object_mut().expect("object");
        for (k, v) in obj {
            if !target.contains_key(k) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
            target.insert(k.clone(), v.clone());
        }
        serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<ExperimentKind>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, expected)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("steps", self.steps),
            ("restarts", self.restarts),
            ("circle_n", self.circle_n),
            ("subset_size", self.subset_size),
            ("synthetic_n", self.synthetic_n),
            ("synthetic_d_in", self.synthetic_d_in),
            ("synthetic_d_out", self.synthetic_d_out),
            ("extend_max", self.extend_max),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("widths must be positive, got {:?}", self.widths)));
        }
        for (name, v) in [("init_sigma", self.init_sigma), ("step_size", self.step_size), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lr_numerator >= 0.0 && self.lr_numerator.is_finite()) {
            return Err(Error::Config(format!("lr_numerator must be ≥ 0, got {}", self.lr_numerator)));
        }
        for (name, v) in [
            ("lr_clamp", self.lr_clamp),
            ("stop_after_drop", self.stop_after_drop),
            ("start_norm", self.start_norm),
        ] {
            if matches!(v, Some(c) if !(c > 0.0 && c.is_finite())) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.threshold.is_nan() {
            return Err(Error::Config("threshold is NaN".into()));
        }
        if self.dataset == DatasetSource::Circle && !self.circle_n.is_multiple_of(2) {
            return Err(Error::Config(format!("circle_n must be even, got {}", self.circle_n)));
        }
        let needs_idx = self.dataset == DatasetSource::Idx || self.kind == ExperimentKind::MnistTrain;
        if needs_idx {
            for (name, p) in [("idx_images", &self.idx_images), ("idx_labels", &self.idx_labels)] {
                match p {
                    None => return Err(Error::Config(format!("{name} is required"))),
                    Some(p) if !p.is_file() => {
                        return Err(Error::Config(format!("{name}: {} does not exist", p.display())))
                    }
                    Some(_) => {}
                }
            }
        }
        match self.kind {
            ExperimentKind::Counterexample | ExperimentKind::ExtendDepth
                if self.dataset != DatasetSource::Circle || self.circle_n != 8 || self.depth != 3 =>
            {
                Err(Error::Config(format!(
                    "{} starts from depth 3 on the 8-point circle dataset",
                    self.kind
                )))
            }
            ExperimentKind::Trajectory
                if self.start == TrajectoryStart::Counterexample
                    && (self.dataset != DatasetSource::Circle || self.circle_n != 8 || self.depth != 3) =>
            {
                Err(Error::Config(
                    "the counterexample start needs depth 3 on the 8-point circle dataset".into(),
                ))
            }
            ExperimentKind::MnistTrain if self.depth < 2 => {
                Err(Error::Config("mnist-train needs depth ≥ 2".into()))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_through_names() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn file_keys_override_kind_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "trajectory", "steps": 7, "clock": "s"}"#, None).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Trajectory);
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.clock, ClockChoice::S);
        assert_eq!(cfg.widths, vec![4]);
    }

    #[test]
    fn bad_files_are_config_errors() {
        for text in [
            "[1, 2]",
            r#"{"kind": "escape-search", "depht": 3}"#,
            r#"{"kind": "warp-drive"}"#,
            r#"{"steps": 3}"#,
            r#"{"kind": "escape-search", "steps": "many"}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text, None), Err(Error::Config(_))), "{text}");
        }
        assert!(ExperimentConfig::from_json(r#"{"kind": "trajectory"}"#, Some(ExperimentKind::Counterexample)).is_err());
    }

    #[test]
    fn serialized_config_parses_back() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::RankProfile);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json(), None).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::defaults(ExperimentKind::EscapeSearch).validate().is_ok());
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::EscapeSearch);
        cfg.init_sigma = 0.0;
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig::defaults(ExperimentKind::EscapeSearch);
        cfg.widths = vec![];
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig::defaults(ExperimentKind::MnistTrain);
        cfg.idx_images = Some(PathBuf::from("/definitely/not/here"));
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig::defaults(ExperimentKind::Counterexample);
        cfg.circle_n = 12;
        assert!(cfg.validate().is_err());
    }
}
