//! Layered settings (defaults < JSON file < flags) and resolved-config
//! snapshots.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// First key path present in `given` but absent from `known`.
fn unknown_key(given: &Value, known: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(g), Value::Object(k)) = (given, known) else {
        return None;
    };
    for (key, v) in g {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match k.get(key) {
            None => return Some(path),
            Some(kv) => {
                if let Some(p) = unknown_key(v, kv, &path) {
                    return Some(p);
                }
            }
        }
    }
    None
}

pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::user(format!("cannot read config file {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::user(format!("config file {} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::user(format!("config file {} must hold a JSON object", path.display())));
    }
    Ok(v)
}

/// Applies `file` then `flags` on top of `base` and deserializes the result.
/// Keys that `T` does not know are rejected.
pub fn resolve<T: Serialize + DeserializeOwned>(base: &T, file: Option<Value>, flags: Value) -> Result<T, CliError> {
    let mut v = serde_json::to_value(base).map_err(|e| CliError::Internal(e.to_string()))?;
    if let Some(f) = file {
        merge(&mut v, f);
    }
    merge(&mut v, flags);
    let t: T = serde_json::from_value(v.clone()).map_err(|e| CliError::user(format!("invalid configuration: {e}")))?;
    let back = serde_json::to_value(&t).map_err(|e| CliError::Internal(e.to_string()))?;
    if let Some(k) = unknown_key(&v, &back, "") {
        return Err(CliError::user(format!("unknown configuration key '{k}'")));
    }
    Ok(t)
}

/// Builds a flag-override object, skipping flags that were not given.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set<V: Serialize>(mut self, key: &str, value: Option<V>) -> Self {
        if let Some(v) = value {
            self.0.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
        }
        self
    }

    pub fn flag(self, key: &str, on: bool) -> Self {
        self.set(key, on.then_some(true))
    }

    pub fn nest(mut self, key: &str, inner: Overrides) -> Self {
        if !inner.0.is_empty() {
            self.0.insert(key.to_string(), Value::Object(inner.0));
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::user(format!("missing --{flag} (pass the flag or set \"{}\" in the config file)", flag.replace('-', "_"))))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::user(format!("cannot create {}: {e}", dir.display())))
}

/// Writes `<out_dir>/<command>.config.json` holding the resolved settings and
/// the time of the run. This is the only artifact carrying a timestamp.
pub fn write_snapshot<T: Serialize>(out_dir: &Path, command: &str, config: &T) -> Result<PathBuf, CliError> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let snapshot = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
        "config": config,
    });
    let path = out_dir.join(format!("{command}.config.json"));
    let text = serde_json::to_string_pretty(&snapshot).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::user(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(default)]
    struct Inner {
        a: u32,
        b: f64,
    }

    impl Default for Inner {
        fn default() -> Self {
            Self { a: 1, b: 2.0 }
        }
    }

    #[derive(Debug, Serialize, Deserialize, PartialEq, Default)]
    #[serde(default)]
    struct Outer {
        name: Option<String>,
        inner: Inner,
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = serde_json::json!({"name": "file", "inner": {"a": 5}});
        let flags = Overrides::new().nest("inner", Overrides::new().set("b", Some(9.0))).into_value();
        let got: Outer = resolve(&Outer::default(), Some(file), flags).unwrap();
        assert_eq!(
            got,
            Outer {
                name: Some("file".into()),
                inner: Inner { a: 5, b: 9.0 }
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file = serde_json::json!({"inner": {"c": 1}});
        let err = resolve(&Outer::default(), Some(file), Value::Object(Map::new())).unwrap_err();
        assert!(matches!(err, CliError::User(ref m) if m.contains("inner.c")), "{err}");
    }

    #[test]
    fn wrong_types_are_user_errors() {
        let file = serde_json::json!({"inner": {"a": "x"}});
        assert!(matches!(
            resolve(&Outer::default(), Some(file), Value::Object(Map::new())),
            Err(CliError::User(_))
        ));
    }
}
