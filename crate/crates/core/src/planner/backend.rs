use thiserror::Error;

use super::context::PromptContext;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("backend failed after {attempts} attempt(s): {message}")]
    Failed { attempts: u32, message: String },
    #[error("unusable backend response: {0}")]
    InvalidResponse(String),
}

/// A source of raw plan text. Implementations are shared across episodes.
pub trait PlannerBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn generate(&self, context: &PromptContext) -> Result<String, BackendError>;
}
