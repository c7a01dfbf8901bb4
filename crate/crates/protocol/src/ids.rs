use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ProtocolError;

pub const MAX_NAME_LEN: usize = 128;

/// Globally unique key of a function: `(module, name)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawFunctionId")]
pub struct FunctionId {
    module: String,
    name: String,
}

#[derive(Deserialize)]
struct RawFunctionId {
    module: String,
    name: String,
}

impl TryFrom<RawFunctionId> for FunctionId {
    type Error = ProtocolError;

    fn try_from(raw: RawFunctionId) -> Result<Self, Self::Error> {
        FunctionId::new(raw.module, raw.name)
    }
}

fn check_name(what: &str, s: &str) -> Result<(), ProtocolError> {
    if s.is_empty() || s.len() > MAX_NAME_LEN {
        return Err(ProtocolError::InvalidFunctionId(format!(
            "{what} must be 1..={MAX_NAME_LEN} bytes, got {}",
            s.len()
        )));
    }
    // "." and ".." would escape the store's directory layout.
    if s == "." || s == ".." {
        return Err(ProtocolError::InvalidFunctionId(format!("{what} may not be {s:?}")));
    }
    if let Some(c) = s
        .chars()
        .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')))
    {
        return Err(ProtocolError::InvalidFunctionId(format!(
            "{what} {s:?} contains forbidden character {c:?}"
        )));
    }
    Ok(())
}

impl FunctionId {
    pub fn new(module: impl Into<String>, name: impl Into<String>) -> Result<Self, ProtocolError> {
        let module = module.into();
        let name = name.into();
        check_name("module name", &module)?;
        check_name("function name", &name)?;
        Ok(FunctionId { module, name })
    }

    pub fn module(&self) -> &str {
        &self.module
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.module, self.name)
    }
}

impl FromStr for FunctionId {
    type Err = ProtocolError;

    /// Parses `module/name`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (module, name) = s
            .split_once('/')
            .ok_or_else(|| ProtocolError::InvalidFunctionId(format!("expected module/name, got {s:?}")))?;
        FunctionId::new(module, name)
    }
}

macro_rules! id128 {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; 16]);

        impl $name {
            /// Fresh id from the thread-local CSPRNG.
            pub fn random() -> Self {
                $name(rand::rng().random())
            }

            pub fn as_bytes(&self) -> &[u8; 16] {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), hex::encode(self.0))
            }
        }

        impl FromStr for $name {
            type Err = ProtocolError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let mut out = [0u8; 16];
                hex::decode_to_slice(s, &mut out).map_err(|e| {
                    ProtocolError::malformed(format!("bad {} {s:?}: {e}", stringify!($name)))
                })?;
                Ok($name(out))
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

id128!(
    /// 128-bit random tag tying a response to its request.
    CorrelationId
);
id128!(
    /// 128-bit worker identity, random at first boot.
    WorkerId
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_plain_names() {
        let id = FunctionId::new("bench", "hello-v1.2_x").unwrap();
        assert_eq!(id.to_string(), "bench/hello-v1.2_x");
        assert_eq!("bench/hello-v1.2_x".parse::<FunctionId>().unwrap(), id);
    }

    #[test]
    fn rejects_bad_names() {
        for (m, n) in [
            ("", "f"),
            ("m", ""),
            ("a/b", "f"),
            ("m", "with space"),
            ("..", "f"),
            ("m", "."),
            ("m", "é"),
        ] {
            assert!(FunctionId::new(m, n).is_err(), "{m:?}/{n:?}");
        }
        assert!(FunctionId::new("m", "x".repeat(129)).is_err());
        assert!(FunctionId::new("m", "x".repeat(128)).is_ok());
    }

    #[test]
    fn ids_hex_round_trip() {
        let c = CorrelationId::random();
        assert_eq!(c.to_string().parse::<CorrelationId>().unwrap(), c);
        assert_ne!(CorrelationId::random(), CorrelationId::random());
        assert!("zz".parse::<WorkerId>().is_err());
    }
}
