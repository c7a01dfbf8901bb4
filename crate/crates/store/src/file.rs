use std::fs::{self, File};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crc::{Crc, CRC_64_XZ};
use fl_protocol::{decode_descriptor, encode_descriptor, FunctionDescriptor, FunctionId};
use rand::Rng;

use crate::{check, FunctionStore, PutOutcome, StoreError};

pub const FLFN_MAGIC: [u8; 4] = *b"FLFN";
pub const FLFN_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;
const EXT: &str = "flfn";

static CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// `FLFN` ‖ version (u32 BE) ‖ CRC-64/XZ of the remainder (u64 BE) ‖ descriptor.
pub fn encode_flfn(d: &FunctionDescriptor) -> Vec<u8> {
    let body = encode_descriptor(d);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&FLFN_MAGIC);
    out.extend_from_slice(&FLFN_VERSION.to_be_bytes());
    out.extend_from_slice(&CRC64.checksum(&body).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_flfn(buf: &[u8]) -> Result<FunctionDescriptor, StoreError> {
    let corrupt = |why: &str| StoreError::StorageUnavailable(format!("corrupt function file: {why}"));
    if buf.len() < HEADER_LEN || buf[..4] != FLFN_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_be_bytes(buf[4..8].try_into().unwrap());
    if version != FLFN_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let want = u64::from_be_bytes(buf[8..16].try_into().unwrap());
    let body = &buf[HEADER_LEN..];
    if CRC64.checksum(body) != want {
        return Err(corrupt("checksum mismatch"));
    }
    decode_descriptor(body).map_err(|e| corrupt(&e.to_string()))
}

/// One file per function; writes are serialized and land via temp file +
/// rename so readers only ever see a complete old or new file.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    writer: Mutex<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        // Probe writability up front rather than on the first upload.
        let probe = root.join(".write-probe");
        File::create(&probe)?;
        fs::remove_file(&probe)?;
        let store = FileStore { root, writer: Mutex::new(()) };
        store.remove_stale_temps()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, id: &FunctionId) -> PathBuf {
        self.root.join(id.module()).join(format!("{}.{EXT}", id.name()))
    }

    fn remove_stale_temps(&self) -> Result<(), StoreError> {
        for module in fs::read_dir(&self.root)? {
            let module = module?;
            if !module.file_type()?.is_dir() {
                continue;
            }
            for f in fs::read_dir(module.path())? {
                let f = f?;
                if f.file_name().to_string_lossy().contains(".tmp-") {
                    tracing::warn!(path = %f.path().display(), "removing interrupted write");
                    fs::remove_file(f.path())?;
                }
            }
        }
        Ok(())
    }
}

fn sync_dir(dir: &Path) -> std::io::Result<()> {
    File::open(dir)?.sync_all()
}

impl FunctionStore for FileStore {
    fn put(&self, d: FunctionDescriptor) -> Result<PutOutcome, StoreError> {
        check(&d)?;
        let _guard = self.writer.lock().unwrap();
        let path = self.path_of(&d.id);
        let dir = path.parent().unwrap();
        fs::create_dir_all(dir)?;
        let existed = path.exists();

        let tmp = dir.join(format!("{}.{EXT}.tmp-{:016x}", d.id.name(), rand::rng().random::<u64>()));
        let write = || -> std::io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(&encode_flfn(&d))?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
            sync_dir(dir)
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        Ok(if existed { PutOutcome::Updated } else { PutOutcome::Created })
    }

    fn get(&self, id: &FunctionId) -> Result<FunctionDescriptor, StoreError> {
        let buf = match fs::read(self.path_of(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::NotFound(id.clone())),
            Err(e) => return Err(e.into()),
        };
        let d = decode_flfn(&buf)?;
        if &d.id != id {
            return Err(StoreError::StorageUnavailable(format!(
                "file for {id} holds descriptor of {}",
                d.id
            )));
        }
        Ok(d)
    }

    fn delete(&self, id: &FunctionId) -> Result<(), StoreError> {
        let _guard = self.writer.lock().unwrap();
        let path = self.path_of(id);
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::NotFound(id.clone())),
            Err(e) => return Err(e.into()),
        }
        let dir = path.parent().unwrap();
        // Drop the module directory once empty; ignore races with a concurrent put.
        let _ = fs::remove_dir(dir);
        sync_dir(&self.root)?;
        Ok(())
    }

    fn list(&self) -> Result<Vec<FunctionId>, StoreError> {
        let mut out = Vec::new();
        for module in fs::read_dir(&self.root)? {
            let module = module?;
            if !module.file_type()?.is_dir() {
                continue;
            }
            let module_name = module.file_name().to_string_lossy().into_owned();
            for f in fs::read_dir(module.path())? {
                let path = f?.path();
                if path.extension().and_then(|e| e.to_str()) != Some(EXT) {
                    continue;
                }
                let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
                match FunctionId::new(module_name.clone(), stem) {
                    Ok(id) => out.push(id),
                    Err(e) => tracing::warn!(path = %path.display(), "skipping foreign file: {e}"),
                }
            }
        }
        Ok(out)
    }
}
