//! Day-ahead scheduling agent: prompting, parsing, retrieval and reflexion.

pub mod advisor;
pub mod agent;
pub mod kb;
pub mod parse;
pub mod prompt;
pub mod similarity;

pub use advisor::{Advisor, GarbageAdvisor, RemoteAdvisor, RemoteConfig, ScriptedAdvisor, StubAdvisor, StubConfig};
pub use kb::{KnowledgeBase, KnowledgeEntry, Retrieval, UpdateOutcome};
pub use parse::{format_answer, parse_response, ParseError};
pub use prompt::{build_prompt, DeviceSpecs, PromptBundle, Sampling};
pub use similarity::similarity;
