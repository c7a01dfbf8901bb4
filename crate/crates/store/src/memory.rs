use std::collections::HashMap;
use std::sync::RwLock;

use fl_protocol::{FunctionDescriptor, FunctionId};

use crate::{check, FunctionStore, PutOutcome, StoreError};

#[derive(Debug, Default)]
pub struct MemoryStore {
    map: RwLock<HashMap<FunctionId, FunctionDescriptor>>,
}

impl FunctionStore for MemoryStore {
    fn put(&self, d: FunctionDescriptor) -> Result<PutOutcome, StoreError> {
        check(&d)?;
        let mut map = self.map.write().unwrap();
        Ok(match map.insert(d.id.clone(), d) {
            Some(_) => PutOutcome::Updated,
            None => PutOutcome::Created,
        })
    }

    fn get(&self, id: &FunctionId) -> Result<FunctionDescriptor, StoreError> {
        self.map.read().unwrap().get(id).cloned().ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    fn delete(&self, id: &FunctionId) -> Result<(), StoreError> {
        match self.map.write().unwrap().remove(id) {
            Some(_) => Ok(()),
            None => Err(StoreError::NotFound(id.clone())),
        }
    }

    fn list(&self) -> Result<Vec<FunctionId>, StoreError> {
        Ok(self.map.read().unwrap().keys().cloned().collect())
    }
}
