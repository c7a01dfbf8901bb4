//! Guest side of the function wrapper.
//!
//! A guest exports linear `memory`, `_fl_alloc(len) -> ptr` and
//! `_fl_run(ptr, len) -> i64`. The host writes the JSON arguments into a
//! region obtained from `_fl_alloc`, calls `_fl_run`, and reads the response
//! envelope from the region described by the returned value
//! (`offset << 32 | length`).
//!
//! Use [`entry!`] to wire a handler `fn(Value) -> Result<Value, String>`.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
pub use serde_json::{self, json, Value};

#[cfg(target_arch = "wasm32")]
#[link(wasm_import_module = "funless")]
extern "C" {
    fn fl_http(ptr: *const u8, len: usize) -> i64;
    fn fl_log(ptr: *const u8, len: usize);
    fn fl_sleep(ms: i64);
}

/// Reserves `len` writable bytes for the host. Regions are never freed:
/// every invocation runs in a fresh instance.
#[no_mangle]
pub extern "C" fn _fl_alloc(len: i32) -> i32 {
    let mut buf = Vec::<u8>::with_capacity(len.max(0) as usize);
    let ptr = buf.as_mut_ptr();
    std::mem::forget(buf);
    ptr as usize as i32
}

/// Leaks `bytes` and returns the packed `offset << 32 | len` handle.
pub fn pack(bytes: Vec<u8>) -> i64 {
    let bytes = bytes.leak();
    pack_raw(bytes.as_ptr() as usize as u32, bytes.len() as u32)
}

pub fn pack_raw(offset: u32, len: u32) -> i64 {
    ((u64::from(offset) << 32) | u64::from(len)) as i64
}

/// # Safety
/// `ptr..ptr+len` must be a region previously handed out by `_fl_alloc` and
/// filled by the host.
pub unsafe fn input<'a>(ptr: i32, len: i32) -> &'a [u8] {
    if len <= 0 {
        return &[];
    }
    std::slice::from_raw_parts(ptr as usize as *const u8, len as usize)
}

/// Runs `handler` on the decoded arguments and packs the response envelope.
pub fn run(ptr: i32, len: i32, handler: fn(Value) -> Result<Value, String>) -> i64 {
    let raw = unsafe { input(ptr, len) };
    let envelope = match serde_json::from_slice::<Value>(raw) {
        Ok(args) => match handler(args) {
            Ok(payload) => json!({ "status": "ok", "payload": payload }),
            Err(message) => json!({ "status": "error", "message": message }),
        },
        Err(e) => json!({ "status": "error", "message": format!("invalid arguments: {e}") }),
    };
    pack(serde_json::to_vec(&envelope).expect("envelope serializes"))
}

#[macro_export]
macro_rules! entry {
    ($handler:path) => {
        #[no_mangle]
        pub extern "C" fn _fl_run(ptr: i32, len: i32) -> i64 {
            $crate::run(ptr, len, $handler)
        }
    };
}

pub fn log(msg: &str) {
    #[cfg(target_arch = "wasm32")]
    unsafe {
        fl_log(msg.as_ptr(), msg.len())
    }
    #[cfg(not(target_arch = "wasm32"))]
    eprintln!("{msg}");
}

/// Suspends the guest for `ms` milliseconds on the host.
pub fn sleep_ms(ms: u64) {
    #[cfg(target_arch = "wasm32")]
    unsafe {
        fl_sleep(ms as i64)
    }
    #[cfg(not(target_arch = "wasm32"))]
    std::thread::sleep(std::time::Duration::from_millis(ms));
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status_code: u16,
    pub headers: serde_json::Map<String, Value>,
    pub body: Vec<u8>,
}

/// Performs an HTTP exchange through the host.
pub fn http(
    method: &str,
    url: &str,
    headers: &[(&str, &str)],
    body: &[u8],
    timeout_ms: u64,
) -> Result<HttpResponse, String> {
    let headers: serde_json::Map<String, Value> =
        headers.iter().map(|(k, v)| (k.to_string(), Value::from(*v))).collect();
    let req = json!({
        "method": method,
        "url": url,
        "headers": headers,
        "body": B64.encode(body),
        "timeout_ms": timeout_ms,
    });
    let req = serde_json::to_vec(&req).map_err(|e| e.to_string())?;
    let resp = http_raw(&req)?;
    let resp: Value = serde_json::from_slice(&resp).map_err(|e| format!("bad host response: {e}"))?;
    if let Some(err) = resp.get("error") {
        return Err(err.as_str().unwrap_or("unknown error").to_string());
    }
    let status_code = resp
        .get("status_code")
        .and_then(Value::as_u64)
        .ok_or("host response lacks status_code")? as u16;
    let body = resp.get("body").and_then(Value::as_str).unwrap_or("");
    let body = B64.decode(body).map_err(|e| format!("bad body encoding: {e}"))?;
    let headers = resp.get("headers").and_then(Value::as_object).cloned().unwrap_or_default();
    Ok(HttpResponse { status_code, headers, body })
}

#[cfg(target_arch = "wasm32")]
fn http_raw(req: &[u8]) -> Result<Vec<u8>, String> {
    let packed = unsafe { fl_http(req.as_ptr(), req.len()) } as u64;
    let (ptr, len) = ((packed >> 32) as usize, (packed & 0xffff_ffff) as usize);
    Ok(unsafe { std::slice::from_raw_parts(ptr as *const u8, len) }.to_vec())
}

#[cfg(not(target_arch = "wasm32"))]
fn http_raw(_req: &[u8]) -> Result<Vec<u8>, String> {
    Err("fl_http is only available inside the worker".into())
}
