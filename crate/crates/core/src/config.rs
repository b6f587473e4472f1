//! Settings files whose keys mirror command-line flag names.
//!
//! Keys may be written `objectness-min`, `objectness_min` or `--objectness-min`;
//! all three name the same setting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagConfig {
    values: BTreeMap<String, Value>,
}

pub fn normalize_key(key: &str) -> String {
    key.trim_start_matches('-').replace('_', "-")
}

impl FlagConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(map) = value else {
            return Err(Error::InvalidConfig("top level must be a JSON object".into()));
        };
        let mut values = BTreeMap::new();
        for (k, v) in map {
            let key = normalize_key(&k);
            if values.insert(key.clone(), v).is_some() {
                return Err(Error::InvalidConfig(format!("key `{key}` given twice")));
            }
        }
        Ok(FlagConfig { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_value(crate::io::read_json(path)?)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Rejects keys that are not among `allowed` (flag names without dashes
    /// prefix, e.g. `"tau"`).
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.keys().filter(|k| !allowed.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "unknown key(s) {}; expected one of {}",
                unknown.join(", "),
                allowed.join(", ")
            )))
        }
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        let key = normalize_key(key);
        match self.values.get(&key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::InvalidConfig(format!("`{key}`: {e}"))),
        }
    }

    /// Command-line value if given, else the file's, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Copy without the given keys.
    pub fn without(&self, keys: &[&str]) -> FlagConfig {
        let drop: Vec<String> = keys.iter().map(|k| normalize_key(k)).collect();
        FlagConfig {
            values: self
                .values
                .iter()
                .filter(|(k, _)| !drop.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Deserializes the whole file into a struct with snake_case fields.
    pub fn into_struct<T: DeserializeOwned>(&self) -> Result<T> {
        let map: serde_json::Map<String, Value> = self
            .values
            .iter()
            .map(|(k, v)| (k.replace('-', "_"), v.clone()))
            .collect();
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_spellings_are_equivalent() {
        let c = FlagConfig::from_value(json!({"objectness_min": 0.5, "--tau": 0.9, "top-k": 3})).unwrap();
        assert_eq!(c.get::<f64>("objectness-min").unwrap(), Some(0.5));
        assert_eq!(c.get::<f64>("tau").unwrap(), Some(0.9));
        assert_eq!(c.get::<usize>("top_k").unwrap(), Some(3));
        assert_eq!(c.get::<usize>("num-slots").unwrap(), None);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let c = FlagConfig::from_value(json!({"lambda": 0.25})).unwrap();
        assert_eq!(c.pick(Some(0.9), "lambda", 0.5).unwrap(), 0.9);
        assert_eq!(c.pick(None, "lambda", 0.5).unwrap(), 0.25);
        assert_eq!(c.pick(None, "tau", 0.7).unwrap(), 0.7);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(FlagConfig::from_value(json!([1, 2])).is_err());
        assert!(FlagConfig::from_value(json!({"top_k": 1, "top-k": 2})).is_err());
        let c = FlagConfig::from_value(json!({"lambda": "high", "bogus": 1})).unwrap();
        assert!(c.get::<f64>("lambda").is_err());
        assert!(c.check_keys(&["lambda"]).is_err());
        assert!(c.check_keys(&["lambda", "bogus"]).is_ok());
    }

    #[test]
    fn struct_view() {
        #[derive(serde::Deserialize, Debug, PartialEq)]
        struct S {
            num_frames: u32,
        }
        let c = FlagConfig::from_value(json!({"num-frames": 7, "seed": 1})).unwrap();
        assert_eq!(c.without(&["seed"]).into_struct::<S>().unwrap(), S { num_frames: 7 });
    }
}
