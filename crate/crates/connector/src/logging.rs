//! Minimal stderr logger controlled by the CONNECTOR_LOG environment variable.
//!
//! Levels: error < warn < info < debug. Default is warn.

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error = 0,
    Warn = 1,
    Info = 2,
    Debug = 3,
}

static LEVEL: OnceLock<Level> = OnceLock::new();

pub fn level() -> Level {
    *LEVEL.get_or_init(|| match std::env::var("CONNECTOR_LOG").as_deref() {
        Ok("error") => Level::Error,
        Ok("info") => Level::Info,
        Ok("debug") => Level::Debug,
        _ => Level::Warn,
    })
}

pub fn enabled(lvl: Level) -> bool {
    lvl <= level()
}

macro_rules! warn_log {
    ($($arg:tt)*) => {
        if $crate::logging::enabled($crate::logging::Level::Warn) {
            eprintln!("[warn] {}", format!($($arg)*));
        }
    };
}

macro_rules! info_log {
    ($($arg:tt)*) => {
        if $crate::logging::enabled($crate::logging::Level::Info) {
            eprintln!("[info] {}", format!($($arg)*));
        }
    };
}

pub(crate) use info_log;
pub(crate) use warn_log;
