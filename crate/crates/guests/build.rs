//! Compiles the guest workspace under `wasm/` for wasm32-wasip1 and copies
//! each module into OUT_DIR, where `src/lib.rs` embeds them.
//!
//! Set `FL_GUESTS_DIR` to a directory of prebuilt `<name>.wasm` files to
//! skip the nested build.

use std::env;
use std::fs;
use std::path::PathBuf;
use std::process::Command;

const GUESTS: &[&str] = &["hello", "sleep", "network", "server_reply", "matrix_mult", "echo", "hostile"];

fn main() {
    let manifest_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out_dir = PathBuf::from(env::var("OUT_DIR").unwrap());
    println!("cargo:rerun-if-changed=wasm/Cargo.toml");
    println!("cargo:rerun-if-changed=wasm/Cargo.lock");
    for dir in ["sdk", "hello", "sleep", "network", "server-reply", "matrix-mult", "echo", "hostile"] {
        println!("cargo:rerun-if-changed=wasm/{dir}");
    }
    println!("cargo:rerun-if-env-changed=FL_GUESTS_DIR");

    let built = match env::var_os("FL_GUESTS_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => {
            let target_dir = out_dir.join("wasm-target");
            let cargo = env::var("CARGO").unwrap_or_else(|_| "cargo".into());
            let status = Command::new(cargo)
                .args(["build", "--release", "--target", "wasm32-wasip1", "--manifest-path"])
                .arg(manifest_dir.join("wasm/Cargo.toml"))
                .arg("--target-dir")
                .arg(&target_dir)
                .env_remove("RUSTFLAGS")
                .env_remove("CARGO_ENCODED_RUSTFLAGS")
                .env_remove("CARGO_TARGET_DIR")
                .env_remove("CARGO_BUILD_TARGET")
                .env_remove("RUSTC_WORKSPACE_WRAPPER")
                .status()
                .expect("failed to spawn cargo for the guest build");
            assert!(
                status.success(),
                "guest build failed; is the wasm32-wasip1 target installed? (rustup target add wasm32-wasip1)"
            );
            target_dir.join("wasm32-wasip1/release")
        }
    };
    for g in GUESTS {
        let src = built.join(format!("{g}.wasm"));
        fs::copy(&src, out_dir.join(format!("{g}.wasm")))
            .unwrap_or_else(|e| panic!("copying {}: {e}", src.display()));
    }
}
