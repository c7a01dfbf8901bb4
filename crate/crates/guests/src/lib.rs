//! Compiled guest modules implementing the function wrapper ABI.
//!
//! | guest          | arguments                              | payload                         |
//! |----------------|----------------------------------------|---------------------------------|
//! | `hello`        | `{"name": s}`                          | `"Hello " + s` (default world)  |
//! | `sleep`        | any                                    | `"Slept for 3 seconds"`         |
//! | `network`      | `{"target_url", "count"=16}`           | `{"durations_ms": [...]}`       |
//! | `server_reply` | `{"target_url", "message"}`            | `{"reply": body}`               |
//! | `matrix_mult`  | `{"a": [[..]], "b": [[..]]}`           | product matrix                  |
//! | `echo`         | any JSON value                         | the same value                  |
//! | `hostile`      | `{"mode": ...}`                        | traps, loops, ABI violations    |

macro_rules! guest {
    ($(#[$m:meta])* $const:ident, $file:literal) => {
        $(#[$m])*
        pub const $const: &[u8] = include_bytes!(concat!(env!("OUT_DIR"), "/", $file, ".wasm"));
    };
}

guest!(HELLO, "hello");
guest!(SLEEP, "sleep");
guest!(NETWORK, "network");
guest!(SERVER_REPLY, "server_reply");
guest!(MATRIX_MULT, "matrix_mult");
guest!(ECHO, "echo");
guest!(
    /// Misbehaves on request; see the module docs.
    HOSTILE,
    "hostile"
);

pub const ALL: &[(&str, &[u8])] = &[
    ("hello", HELLO),
    ("sleep", SLEEP),
    ("network", NETWORK),
    ("server_reply", SERVER_REPLY),
    ("matrix_mult", MATRIX_MULT),
    ("echo", ECHO),
    ("hostile", HOSTILE),
];

pub fn by_name(name: &str) -> Option<&'static [u8]> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, b)| *b)
}
