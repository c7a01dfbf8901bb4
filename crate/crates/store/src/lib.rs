//! Function storage behind a narrow put/get/delete/list interface.
//!
//! Two backends: [`MemoryStore`] for tests and ephemeral deployments, and
//! [`FileStore`], which keeps one `.flfn` file per function under
//! `root/<module>/<name>.flfn` and replaces files by atomic rename.

mod file;
mod memory;

use std::path::PathBuf;
use std::sync::Arc;

use fl_protocol::{FunctionDescriptor, FunctionId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{decode_flfn, encode_flfn, FileStore, FLFN_MAGIC, FLFN_VERSION};
pub use memory::MemoryStore;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("function {0} not found")]
    NotFound(FunctionId),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::StorageUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Created,
    Updated,
}

/// Descriptors are stored verbatim; callers own the timestamps.
pub trait FunctionStore: Send + Sync {
    fn put(&self, d: FunctionDescriptor) -> Result<PutOutcome, StoreError>;
    fn get(&self, id: &FunctionId) -> Result<FunctionDescriptor, StoreError>;
    fn delete(&self, id: &FunctionId) -> Result<(), StoreError>;
    fn list(&self) -> Result<Vec<FunctionId>, StoreError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum StoreConfig {
    #[default]
    InMemory,
    FileBacked { root_path: PathBuf },
}

pub fn open(config: &StoreConfig) -> Result<Arc<dyn FunctionStore>, StoreError> {
    Ok(match config {
        StoreConfig::InMemory => Arc::new(MemoryStore::default()),
        StoreConfig::FileBacked { root_path } => Arc::new(FileStore::open(root_path)?),
    })
}

fn check(d: &FunctionDescriptor) -> Result<(), StoreError> {
    d.validate().map_err(|e| StoreError::InvalidDescriptor(e.to_string()))
}
