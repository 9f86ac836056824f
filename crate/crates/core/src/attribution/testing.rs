//! Fixture builders for tests and examples.

use super::{AttributionKind, JudgeKind, Subtask};

/// A filled-in subtask with the given label, exploration, and link.
pub fn subtask(goal: &str, attribution: AttributionKind, exploration: Option<&str>, skill_linked: Option<&str>) -> Subtask {
    Subtask {
        goal: goal.to_string(),
        summary: format!("Worked on: {goal}."),
        exploration: exploration.map(str::to_string),
        exploration_reason: "Steps beyond what the skill described.".to_string(),
        judge: JudgeKind::Environment,
        judge_reason: "Command output confirmed the result.".to_string(),
        attribution,
        attribution_reason: "Follows from the summary.".to_string(),
        skill_linked: skill_linked.map(str::to_string),
        skill_refs: Vec::new(),
    }
}
