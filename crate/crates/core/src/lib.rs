pub mod agent;
pub mod context;
pub mod harness;
pub mod llm;
pub mod playground;
pub mod skills;
pub mod tools;
pub mod trajectory;
