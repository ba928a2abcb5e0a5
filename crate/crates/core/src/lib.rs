//! Mathematical entity linking: extraction, tokenization, recommendation,
//! annotation sessions, evaluation and export.

pub mod corpus;
pub mod evaluation;
pub mod linker;
pub mod math;
pub mod qid;
pub mod recommend;
pub mod session;

pub use qid::Qid;
