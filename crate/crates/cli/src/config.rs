//! Service and CLI settings: defaults, then a TOML file, then `EDGEWIPE_*`
//! environment variables.

use std::path::{Path, PathBuf};

use edgewipe::features::CannyParams;
use edgewipe::imaging::PadPolicy;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root holding `images/`, `forged/`, `manifests/`, `checkpoints/`.
    pub workspace: PathBuf,
    pub bind: String,
    pub tile_size: u32,
    pub pad_policy: PadPolicy,
    pub canny: CannyParams,
    /// Checkpoints kept in memory by the service (least recently used evicted).
    pub resident_checkpoints: usize,
    /// Upload size limit in bytes.
    pub max_upload_bytes: usize,
    pub scorer_url: Option<String>,
    #[serde(skip_serializing)]
    pub scorer_api_key: Option<String>,
    pub scorer_min_interval_ms: u64,
    pub scorer_retries: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workspace: PathBuf::from("workspace"),
            bind: "127.0.0.1:8080".into(),
            tile_size: 256,
            pad_policy: PadPolicy::Reflect,
            canny: CannyParams::default(),
            resident_checkpoints: 1,
            max_upload_bytes: 256 << 20,
            scorer_url: None,
            scorer_api_key: None,
            scorer_min_interval_ms: 200,
            scorer_retries: 3,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::config(format!("{key}={value:?}: {e}")))
}

impl Config {
    /// Resolve settings from an optional file and an environment lookup.
    pub fn resolve(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let file = file.map(Path::to_path_buf).or_else(|| env("EDGEWIPE_CONFIG").map(PathBuf::from));
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            None => Config::default(),
        };
        if let Some(v) = env("EDGEWIPE_WORKSPACE") {
            cfg.workspace = PathBuf::from(v);
        }
        if let Some(v) = env("EDGEWIPE_BIND") {
            cfg.bind = v;
        }
        if let Some(v) = env("EDGEWIPE_TILE_SIZE") {
            cfg.tile_size = parse("EDGEWIPE_TILE_SIZE", &v)?;
        }
        if let Some(v) = env("EDGEWIPE_PAD_POLICY") {
            cfg.pad_policy = match v.as_str() {
                "reflect" => PadPolicy::Reflect,
                "zero" => PadPolicy::Zero,
                _ => return Err(CliError::config(format!("EDGEWIPE_PAD_POLICY={v:?}: expected reflect or zero"))),
            };
        }
        if let Some(v) = env("EDGEWIPE_CANNY_SIGMA") {
            cfg.canny.gaussian_sigma = parse("EDGEWIPE_CANNY_SIGMA", &v)?;
        }
        if let Some(v) = env("EDGEWIPE_CANNY_LOW") {
            cfg.canny.low_threshold = parse("EDGEWIPE_CANNY_LOW", &v)?;
        }
        if let Some(v) = env("EDGEWIPE_CANNY_HIGH") {
            cfg.canny.high_threshold = parse("EDGEWIPE_CANNY_HIGH", &v)?;
        }
        if let Some(v) = env("EDGEWIPE_RESIDENT_CHECKPOINTS") {
            cfg.resident_checkpoints = parse("EDGEWIPE_RESIDENT_CHECKPOINTS", &v)?;
        }
        if let Some(v) = env("EDGEWIPE_MAX_UPLOAD_BYTES") {
            cfg.max_upload_bytes = parse("EDGEWIPE_MAX_UPLOAD_BYTES", &v)?;
        }
        if let Some(v) = env("EDGEWIPE_SCORER_URL") {
            cfg.scorer_url = Some(v);
        }
        if let Some(v) = env("EDGEWIPE_SCORER_API_KEY") {
            cfg.scorer_api_key = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_process_env(file: Option<&Path>) -> Result<Self, CliError> {
        Self::resolve(file, |k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.resident_checkpoints == 0 {
            return Err(CliError::config("resident_checkpoints must be at least 1"));
        }
        self.canny.validate().map_err(CliError::from)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_overrides_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edgewipe.toml");
        std::fs::write(&path, "tile_size = 128\nresident_checkpoints = 2\n[canny]\ngaussian_sigma = 2.0\nlow_threshold = 40.0\nhigh_threshold = 90.0\naperture = 3\n").unwrap();
        let env: HashMap<&str, &str> = HashMap::from([("EDGEWIPE_TILE_SIZE", "64")]);
        let cfg = Config::resolve(Some(&path), |k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.tile_size, 64);
        assert_eq!(cfg.resident_checkpoints, 2);
        assert_eq!(cfg.canny.low_threshold, 40.0);
        assert_eq!(cfg.bind, Config::default().bind);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let env = |k: &str| (k == "EDGEWIPE_TILE_SIZE").then(|| "big".to_string());
        assert_eq!(Config::resolve(None, env).unwrap_err().code, "ConfigError");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "tile_sise = 3\n").unwrap();
        assert!(Config::resolve(Some(&path), |_| None).is_err());
    }

    #[test]
    fn api_key_is_never_serialized() {
        let cfg = Config { scorer_api_key: Some("secret".into()), ..Config::default() };
        assert!(!toml::to_string(&cfg).unwrap().contains("secret"));
    }
}
