//! Feedback policies on grid nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Apply the control with this index in the problem's control set.
    Control {
        index: usize,
    },
    Continue,
    Stop,
    /// Jump to the node `target`.
    Impulse {
        target: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr")]
pub struct FeedbackPolicy {
    grid: Grid,
    actions: Vec<Action>,
}

#[derive(Deserialize)]
struct PolicyRepr {
    grid: Grid,
    actions: Vec<Action>,
}

impl TryFrom<PolicyRepr> for FeedbackPolicy {
    type Error = Error;

    fn try_from(r: PolicyRepr) -> Result<Self> {
        FeedbackPolicy::new(r.grid, r.actions)
    }
}

impl FeedbackPolicy {
    pub fn new(grid: Grid, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != grid.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "policy has {} actions for {} nodes",
                actions.len(),
                grid.node_count()
            )));
        }
        if let Some(Action::Impulse { target }) =
            actions.iter().find(|a| matches!(a, Action::Impulse { target } if *target >= grid.node_count()))
        {
            return Err(Error::InvalidArgument(format!("impulse target {target} is not a grid node")));
        }
        Ok(FeedbackPolicy { grid, actions })
    }

    /// Same action everywhere.
    pub fn uniform(grid: &Grid, action: Action) -> Self {
        FeedbackPolicy { grid: grid.clone(), actions: vec![action; grid.node_count()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action(&self, node: usize) -> Action {
        self.actions[node]
    }

    /// Action of the nearest node.
    pub fn action_at(&self, x: &[f64]) -> Action {
        self.actions[self.grid.nearest_node(x)]
    }

    /// Errors when a control index is out of range for `controls` controls.
    pub fn check_controls(&self, controls: usize) -> Result<()> {
        match self.actions.iter().find(|a| matches!(a, Action::Control { index } if *index >= controls)) {
            Some(a) => Err(Error::InvalidArgument(format!("{a:?} is outside a control set of size {controls}"))),
            None => Ok(()),
        }
    }
}
