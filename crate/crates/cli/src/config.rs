//! Layered run configuration: defaults, then an optional JSON file, then
//! `--a.b=value` or `--set a.b=value` overrides.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

/// Flags owned by the argument parser; any other `--key=value` is a config
/// override.
const PARSER_FLAGS: [&str; 3] = ["config", "set", "threads"];

/// Pulls `--key=value` config overrides out of `args`; everything else is
/// left for the argument parser.
pub fn extract_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<String>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut found = Vec::new();
    for a in args {
        match a.to_str().and_then(|s| s.strip_prefix("--")) {
            Some(s) if s.split_once('=').is_some_and(|(k, _)| !PARSER_FLAGS.contains(&k)) => {
                found.push(s.to_string())
            }
            _ => rest.push(a),
        }
    }
    (rest, found)
}

fn parse_override(raw: &str) -> CliResult<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` must have the form key=value")))?;
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{raw}` has an empty key")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), value))
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let unknown = || CliError::Config(format!("unknown config key `{key}`"));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj: &mut Map<String, Value> = node.as_object_mut().ok_or_else(unknown)?;
        let slot = obj.get_mut(*part).ok_or_else(unknown)?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(unknown())
}

/// Resolves a typed config. Errors name the offending key.
pub fn resolve<T>(file: Option<&Path>, overrides: &[String]) -> CliResult<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut value = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Config(format!("{}: top level must be an object", path.display())));
        }
        merge(&mut value, patch);
    }
    for raw in overrides {
        let (key, v) = parse_override(raw)?;
        set_path(&mut value, &key, v)?;
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("key `{path}`: {}", e.inner()))
    })
}

pub fn to_pretty<T: Serialize>(cfg: &T) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

/// Writes the resolved config, plus run context, next to the outputs.
pub fn dump_effective<T: Serialize>(dir: &Path, command: &str, cfg: &T, threads: usize) -> CliResult<()> {
    let doc = serde_json::json!({
        "command": command,
        "threads": threads,
        "deterministic": deterministic_requested(),
        "config": cfg,
    });
    let bytes = serde_json::to_vec_pretty(&doc).expect("config serializes");
    handsar_io::binfmt::atomic_write(&dir.join(EFFECTIVE_CONFIG_FILE), &bytes).map_err(CliError::from)
}

pub fn deterministic_requested() -> bool {
    std::env::var("IFNET_DETERMINISTIC").is_ok_and(|v| v == "1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Inner {
        rate: f64,
        name: String,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Outer {
        inner: Inner,
        count: usize,
        tag: Option<String>,
    }

    #[test]
    fn override_args_are_split_out() {
        let args: Vec<OsString> = ["handsar", "train", "--a.b=3", "--threads", "2", "--x=1", "--threads=3"]
            .iter()
            .map(OsString::from)
            .collect();
        let (rest, found) = extract_overrides(args);
        assert_eq!(found, vec!["a.b=3", "x=1"]);
        assert_eq!(rest.len(), 5);
    }

    #[test]
    fn overrides_apply_and_type_check() {
        let cfg: Outer =
            resolve(None, &["inner.rate=0.5".into(), "inner.name=abc".into(), "tag=\"x\"".into()]).unwrap();
        assert_eq!(cfg.inner.rate, 0.5);
        assert_eq!(cfg.inner.name, "abc");
        assert_eq!(cfg.tag.as_deref(), Some("x"));

        let err = resolve::<Outer>(None, &["inner.speed=1".into()]).unwrap_err();
        assert!(err.to_string().contains("inner.speed"));
        let err = resolve::<Outer>(None, &["count=-1".into()]).unwrap_err();
        assert!(err.to_string().contains("count"), "{err}");
    }

    #[test]
    fn file_layer_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"inner": {"rate": 2.0, "bogus": 1}}"#).unwrap();
        let err = resolve::<Outer>(Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        fs::write(&path, r#"{"inner": {"rate": 2.0}, "count": 4}"#).unwrap();
        let cfg: Outer = resolve(Some(&path), &["count=5".into()]).unwrap();
        assert_eq!((cfg.inner.rate, cfg.count), (2.0, 5));
    }
}
