//! Closed-loop scenarios.

use serde::{Deserialize, Serialize};

use super::disturbance::{DisturbanceKind, DEFAULT_SEED};
use crate::rhop::SigmaInput;

pub const DEFAULT_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GovernorChoice {
    #[default]
    Dct,
    Sct,
    /// reference applied unchanged
    None,
}

impl GovernorChoice {
    /// Name as written in config files.
    pub fn as_str(self) -> &'static str {
        match self {
            GovernorChoice::Dct => "dct",
            GovernorChoice::Sct => "sct",
            GovernorChoice::None => "none",
        }
    }
}

/// Reference value from `start` on, until the next segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub value: Vec<f64>,
}

/// Piecewise-constant reference of one subsystem; zero before the first segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReferenceSchedule {
    pub segments: Vec<Segment>,
}

impl ReferenceSchedule {
    pub fn constant(value: Vec<f64>) -> Self {
        Self {
            segments: vec![Segment { start: 0, value }],
        }
    }

    pub fn at(&self, k: usize, ny: usize) -> Vec<f64> {
        self.segments
            .iter()
            .filter(|s| s.start <= k)
            .max_by_key(|s| s.start)
            .map(|s| s.value.clone())
            .unwrap_or_else(|| vec![0.0; ny])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub steps: usize,
    pub references: Vec<ReferenceSchedule>,
    pub disturbance: DisturbanceKind,
    pub seed: u64,
    pub governor: GovernorChoice,
    pub horizon: usize,
    pub sigma_input: SigmaInput,
}

impl Scenario {
    /// Constant references, no disturbance.
    pub fn nominal(references: Vec<Vec<f64>>, steps: usize, governor: GovernorChoice) -> Self {
        Self {
            name: "nominal".into(),
            steps,
            references: references.into_iter().map(ReferenceSchedule::constant).collect(),
            disturbance: DisturbanceKind::Zero,
            seed: DEFAULT_SEED,
            governor,
            horizon: 3,
            sigma_input: SigmaInput::default(),
        }
    }

    /// Case-study run: admissible references, then an inadmissible segment
    /// on the first reactor, under the tabulated disturbances.
    pub fn case_study(governor: GovernorChoice, seed: u64) -> Self {
        let sched = |parts: &[(usize, f64)]| ReferenceSchedule {
            segments: parts
                .iter()
                .map(|&(start, v)| Segment { start, value: vec![v] })
                .collect(),
        };
        Self {
            name: "case-study".into(),
            steps: DEFAULT_STEPS,
            references: vec![
                sched(&[(0, 1.0), (60, 3.0), (140, -1.0)]),
                sched(&[(0, 0.1), (80, 1.0), (150, -0.1)]),
                sched(&[(0, -0.1), (100, 0.5), (160, 0.1)]),
            ],
            disturbance: DisturbanceKind::Tabulated,
            seed,
            governor,
            horizon: 3,
            sigma_input: SigmaInput::default(),
        }
    }
}
