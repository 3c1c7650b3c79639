pub mod assembly;
pub mod campaign;
pub mod cli;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod protocol;
pub mod service;
pub mod session;
