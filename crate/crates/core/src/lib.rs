//! Skill-library lifecycle engine.
//!
//! Manages a directory of agent skill packages: profiles them, picks and
//! installs skills before a task, distills what happened afterwards into
//! attributed subtasks, and folds only admissible evidence back into the
//! library as edits or new skills. Every model call goes through the
//! [`gateway::Executor`] trait, so the whole loop runs against scripted
//! executors in tests.

pub mod attribution;
pub mod evolution;
pub mod fsutil;
pub mod gateway;
pub mod lifecycle;
mod process;
pub mod profile;
pub mod recommend;
pub mod store;

/// The guide's chapters, compiled as doc-tests so their examples stay current.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/packages.md")]
    mod packages {}
    #[doc = include_str!("../../../book/src/profiling.md")]
    mod profiling {}
    #[doc = include_str!("../../../book/src/gateway.md")]
    mod gateway {}
    #[doc = include_str!("../../../book/src/recommendation.md")]
    mod recommendation {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/evolution.md")]
    mod evolution {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
