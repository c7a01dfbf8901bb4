//! Upload-time validation of guest binaries.

use fl_protocol::WASM_PREAMBLE;
use wasmparser::types::EntityType;
use wasmparser::{ValType, Validator};

/// Checks the preamble, validates the module, and checks the guest exports:
/// `memory`, `_fl_alloc: [i32] -> [i32]` and `_fl_run: [i32, i32] -> [i64]`.
pub fn check_guest(wasm: &[u8]) -> Result<(), String> {
    if !wasm.starts_with(&WASM_PREAMBLE) {
        return Err("not a wasm v1 binary".into());
    }
    let types = Validator::new().validate_all(wasm).map_err(|e| format!("invalid module: {e}"))?;
    let types = types.as_ref();
    let exports: Vec<(&str, EntityType)> = types.core_exports().ok_or("components are not supported")?.collect();
    let find = |name: &str| exports.iter().find(|(n, _)| *n == name).map(|(_, t)| *t);

    match find("memory") {
        Some(EntityType::Memory(m)) if !m.memory64 => {}
        Some(_) => return Err("export `memory` must be a 32-bit linear memory".into()),
        None => return Err("missing export `memory`".into()),
    }
    let check_fn = |name: &str, params: &[ValType], results: &[ValType]| -> Result<(), String> {
        let id = match find(name) {
            Some(EntityType::Func(id)) | Some(EntityType::FuncExact(id)) => id,
            Some(_) => return Err(format!("export `{name}` is not a function")),
            None => return Err(format!("missing export `{name}`")),
        };
        let sub = &types[id];
        let f = sub.unwrap_func();
        if f.params() != params || f.results() != results {
            return Err(format!("export `{name}` has signature {f}, expected {params:?} -> {results:?}"));
        }
        Ok(())
    };
    check_fn("_fl_alloc", &[ValType::I32], &[ValType::I32])?;
    check_fn("_fl_run", &[ValType::I32, ValType::I32], &[ValType::I64])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_wasm() {
        assert!(check_guest(b"hello").unwrap_err().contains("not a wasm"));
    }

    #[test]
    fn rejects_missing_exports() {
        let empty = [WASM_PREAMBLE.as_slice()].concat();
        assert!(check_guest(&empty).unwrap_err().contains("memory"));
    }

    #[test]
    fn accepts_all_guests() {
        for (name, wasm) in fl_guests::ALL {
            check_guest(wasm).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
