//! Layered option lookup: flag, then config file, then defaults.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use umiclust::{Error, Result};

/// Environment variable consulted for the thread count when neither a
/// flag nor the config file sets it.
pub const THREADS_ENV: &str = "UMICLUST_THREADS";

/// `key = value` lines; `#` starts a comment.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected `key = value`".into(),
                });
            };
            let key = k.trim().trim_start_matches("--").replace('_', "-");
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("config key `{key}`: bad value `{v}`"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Resolves one option from the flag, then the config file, then `default`.
pub fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(cfg.get(key)?.unwrap_or(default))
}

/// Thread count setting: a positive number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Fixed(usize),
}

impl FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Threads::Fixed(n)),
            _ => Err(format!("thread count `{s}` must be a positive integer or `auto`")),
        }
    }
}

/// Flag, config file, environment variable, then `auto`. Auto mode reports
/// the chosen value on stderr.
pub fn resolve_threads(flag: Option<Threads>, cfg: &ConfigFile) -> Result<usize> {
    let setting = match flag {
        Some(t) => t,
        None => match cfg.get::<Threads>("threads")? {
            Some(t) => t,
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => v.parse::<Threads>().map_err(Error::InvalidArgument)?,
                Err(_) => Threads::Auto,
            },
        },
    };
    Ok(match setting {
        Threads::Fixed(n) => n,
        Threads::Auto => {
            let n = std::thread::available_parallelism().map_or(1, |n| n.get());
            eprintln!("threads: {n} (auto)");
            n
        }
    })
}
