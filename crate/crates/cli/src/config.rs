use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub const DEFAULT_CORE_URL: &str = "http://127.0.0.1:8080";

/// Settings read from the config file. Every field is optional; flags and
/// environment variables take precedence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub core_url: Option<String>,
    pub token: Option<String>,
    pub default_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub core_url: String,
    pub token: Option<String>,
    pub default_timeout_ms: Option<u64>,
}

/// `$FL_CONFIG`, else `$XDG_CONFIG_HOME/fl/cli.toml`, else
/// `~/.config/fl/cli.toml`.
pub fn default_config_path() -> Option<PathBuf> {
    if let Some(p) = env::var_os("FL_CONFIG") {
        return Some(PathBuf::from(p));
    }
    let base = match env::var_os("XDG_CONFIG_HOME") {
        Some(x) if !x.is_empty() => PathBuf::from(x),
        _ => PathBuf::from(env::var_os("HOME")?).join(".config"),
    };
    Some(base.join("fl").join("cli.toml"))
}

pub fn load_file(path: &Path, required: bool) -> Result<FileConfig, String> {
    match fs::read_to_string(path) {
        Ok(text) => toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display())),
        Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => Ok(FileConfig::default()),
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

/// Merges the layers. `flag_*` values already include environment
/// variables (clap resolves those).
pub fn resolve(
    flag_url: Option<String>,
    flag_token: Option<String>,
    flag_timeout: Option<u64>,
    file: FileConfig,
) -> Result<CliConfig, String> {
    let core_url = flag_url.or(file.core_url).unwrap_or_else(|| DEFAULT_CORE_URL.to_string());
    if !(core_url.starts_with("http://") || core_url.starts_with("https://")) {
        return Err(format!("core url must be an http(s) URL: {core_url}"));
    }
    Ok(CliConfig {
        core_url: core_url.trim_end_matches('/').to_string(),
        token: flag_token.or(file.token),
        default_timeout_ms: flag_timeout.or(file.default_timeout_ms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file() {
        let file = FileConfig { core_url: Some("http://file:1".into()), token: Some("f".into()), default_timeout_ms: Some(5) };
        let c = resolve(Some("http://flag:2/".into()), None, None, file).unwrap();
        assert_eq!(c.core_url, "http://flag:2");
        assert_eq!(c.token.as_deref(), Some("f"));
        assert_eq!(c.default_timeout_ms, Some(5));
    }

    #[test]
    fn defaults_apply() {
        let c = resolve(None, None, None, FileConfig::default()).unwrap();
        assert_eq!(c.core_url, DEFAULT_CORE_URL);
    }

    #[test]
    fn rejects_non_http_url() {
        assert!(resolve(Some("ftp://x".into()), None, None, FileConfig::default()).is_err());
    }

    #[test]
    fn missing_optional_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_file(&dir.path().join("nope.toml"), false).unwrap(), FileConfig::default());
        assert!(load_file(&dir.path().join("nope.toml"), true).is_err());
    }
}
