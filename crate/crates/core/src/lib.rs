//! Conversational question retrieval: rank candidate questions for a short
//! query, then refine the ranking by asking yes/no questions about tags.

pub mod corpus;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod gate;
pub mod jsonl;
pub mod sim;
pub mod toy;
pub mod trainer;
pub mod vector;

pub use error::{Error, Result};
