//! Flag resolution: explicit flags beat the `--config` file, which beats
//! built-in defaults. The resolved values are written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Keys of the config file that belong to the top-level command.
pub const GLOBAL_KEYS: [&str; 2] = ["threads", "config"];

pub fn load_file(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    match value {
        Value::Object(map) => Ok(map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect()),
        _ => bail!("config {} must hold a JSON object", path.display()),
    }
}

fn from_command_line(matches: &ArgMatches, id: &str) -> bool {
    matches.value_source(id) == Some(ValueSource::CommandLine)
}

/// Overlays `file` onto `parsed` wherever the flag was not given explicitly.
pub fn merge<A: Serialize + DeserializeOwned>(
    parsed: &A,
    matches: &ArgMatches,
    file: &Map<String, Value>,
) -> Result<A> {
    let mut value = serde_json::to_value(parsed)?;
    let fields = value.as_object_mut().expect("argument structs serialize as objects");
    for (key, v) in file {
        if GLOBAL_KEYS.contains(&key.as_str()) {
            continue;
        }
        if !fields.contains_key(key) {
            bail!("unknown key `{key}` in config file");
        }
        if !from_command_line(matches, key) {
            fields.insert(key.clone(), v.clone());
        }
    }
    serde_json::from_value(value).context("config file value has the wrong type")
}

/// `--threads`, honouring the config file unless given on the command line.
pub fn resolve_threads(flag: usize, matches: &ArgMatches, file: &Map<String, Value>) -> Result<usize> {
    match file.get("threads") {
        Some(v) if !from_command_line(matches, "threads") => {
            serde_json::from_value(v.clone()).context("`threads` in config file must be a count")
        }
        _ => Ok(flag),
    }
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    match value {
        Some(v) => Ok(v.clone()),
        None => bail!("missing required --{flag}"),
    }
}

/// `<out>.run.json`.
pub fn run_record_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    if s.to_string_lossy().ends_with('/') {
        s = out.components().as_path().as_os_str().to_os_string();
    }
    s.push(".run.json");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct RunRecord<'a, A> {
    command: &'a str,
    version: &'a str,
    threads: usize,
    args: &'a A,
    #[serde(skip_serializing_if = "Option::is_none")]
    derived: Option<Value>,
}

pub fn write_run_record<A: Serialize>(
    out: &Path,
    command: &str,
    threads: usize,
    args: &A,
    derived: Option<Value>,
) -> Result<()> {
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        args,
        derived,
    };
    let path = run_record_path(out);
    let text = serde_json::to_string_pretty(&record)? + "\n";
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// `dir/stem<suffix>` for an output path `dir/stem.ext`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
