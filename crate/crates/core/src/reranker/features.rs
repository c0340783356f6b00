//! Fixed-width trajectory features.
//!
//! A trajectory is cut to its last three steps and left-padded, so slot 2
//! always describes the candidate itself:
//!
//! ```text
//! steps:  I1(seed) -> A1 -> P1     P1(textual)
//! sf:     [Institution, Author, Paper]   [padding, padding, Paper]
//! ti:     [Textual, Structural, Structural]   [Pad, Pad, Textual]
//! tf:     [s0, s1, s2, initial]      [0, 0, s2, initial]
//! ```

use serde::{Deserialize, Serialize};

use crate::kb::Tgkb;
use crate::plan::PlanningGraph;
use crate::scorer::{expand_query, TextScorer};
use crate::traversal::{StepKind, Trajectory};

pub const TRAJECTORY_SLOTS: usize = 3;
/// Three per-step scores plus the initial ranking score.
pub const TF_WIDTH: usize = TRAJECTORY_SLOTS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraversalId {
    Structural,
    Textual,
    Pad,
}

impl TraversalId {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            TraversalId::Structural => 0,
            TraversalId::Textual => 1,
            TraversalId::Pad => 2,
        }
    }
}

impl From<StepKind> for TraversalId {
    fn from(kind: StepKind) -> Self {
        match kind {
            StepKind::Structural => TraversalId::Structural,
            StepKind::Seed | StepKind::Textual => TraversalId::Textual,
        }
    }
}

/// `sf` holds category names; `None` is the padding token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFeatures {
    pub tf: [f64; TF_WIDTH],
    pub sf: [Option<String>; TRAJECTORY_SLOTS],
    pub ti: [TraversalId; TRAJECTORY_SLOTS],
}

impl TrajectoryFeatures {
    /// True for padded slots.
    pub fn padding_mask(&self) -> [bool; TRAJECTORY_SLOTS] {
        std::array::from_fn(|i| self.ti[i] == TraversalId::Pad)
    }

    pub fn initial_score(&self) -> f64 {
        self.tf[TRAJECTORY_SLOTS]
    }
}

/// Builds features for one trajectory. Step scores use the query expanded
/// with the restriction of the plan node each step matched, when there is one.
pub fn extract_features(
    kb: &Tgkb,
    traj: &Trajectory,
    plan: Option<&PlanningGraph>,
    query: &str,
    scorer: &dyn TextScorer,
    initial_score: f64,
) -> TrajectoryFeatures {
    let path = plan.and_then(|g| g.paths().get(traj.path_index));
    let skip = traj.len().saturating_sub(TRAJECTORY_SLOTS);
    let pad = TRAJECTORY_SLOTS - (traj.len() - skip);

    let mut tf = [0.0; TF_WIDTH];
    let mut sf: [Option<String>; TRAJECTORY_SLOTS] = Default::default();
    let mut ti = [TraversalId::Pad; TRAJECTORY_SLOTS];
    for (slot, (step, layer)) in (pad..).zip(traj.steps.iter().zip(traj.layers()).skip(skip)) {
        let restriction = path.and_then(|p| p.nodes().get(layer)).and_then(|n| n.restriction());
        tf[slot] = scorer.score(&expand_query(query, restriction), step.node);
        sf[slot] = Some(kb.category_name(step.category).to_string());
        ti[slot] = step.kind.into();
    }
    tf[TRAJECTORY_SLOTS] = initial_score;
    TrajectoryFeatures { tf, sf, ti }
}
