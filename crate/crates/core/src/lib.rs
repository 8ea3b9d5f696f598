//! Text-to-SQL generation over a versioned knowledge set of decomposed
//! examples, instructions and schema elements, with feedback-driven edits.

pub mod fixtures;
pub mod sqlkit;
pub mod exec;
pub mod clock;
pub mod provider;
pub mod knowledge;
pub mod retrieval;
pub mod generation;
pub mod evalkit;
pub mod editflow;
