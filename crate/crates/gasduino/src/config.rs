//! JSON configuration file and ambient-profile selection.
//!
//! Keys may be written flat (`{"sensor.a": 110.0}`) or nested
//! (`{"sensor": {"a": 110.0}}`); both forms flatten to the same dotted keys.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gasduino_core::sensor::{AmbientProfile, SensorCurve, SensorError, DEFAULT_NOISE_SIGMA};
use serde_json::Value;
use thiserror::Error;

pub const CONFIG_ENV: &str = "GASDUINO_CONFIG";

const KNOWN_KEYS: &[&str] = &[
    "sensor.a",
    "sensor.b",
    "sensor.r0_ohms",
    "sensor.rl_ohms",
    "sensor.vcc_volts",
    "sensor.adc_bits",
    "profile.name",
    "profile.points",
    "profile.noise_sigma",
    "profile.seed",
];

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: {why}")]
    BadValue { key: String, why: String },
    #[error("both profile.name and profile.points are set")]
    ProfileConflict,
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("bad profile {0:?}: expected night, day, constant:<ppm> or file:<path>")]
    ProfileSpec(String),
}

/// Values read from the config file; everything is optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub sensor_a: Option<f64>,
    pub sensor_b: Option<f64>,
    pub r0_ohms: Option<f64>,
    pub rl_ohms: Option<f64>,
    pub vcc_volts: Option<f64>,
    pub adc_bits: Option<u8>,
    pub profile_name: Option<String>,
    pub profile_points: Option<Vec<(f64, f64)>>,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                if KNOWN_KEYS.contains(&key.as_str()) {
                    out.insert(key, v.clone());
                } else {
                    flatten(&key, v, out);
                }
            }
        }
        other => {
            out.insert(prefix.to_owned(), other.clone());
        }
    }
}

fn bad(key: &str, why: impl Into<String>) -> ConfigFileError {
    ConfigFileError::BadValue {
        key: key.to_owned(),
        why: why.into(),
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigFileError> {
    v.as_f64().ok_or_else(|| bad(key, "expected a number"))
}

/// `[[t, ppm], ...]`
pub fn parse_points(v: &Value) -> Option<Vec<(f64, f64)>> {
    v.as_array()?
        .iter()
        .map(|pair| match pair.as_array()?.as_slice() {
            [t, p] => Some((t.as_f64()?, p.as_f64()?)),
            _ => None,
        })
        .collect()
}

impl FileConfig {
    pub fn from_json(value: &Value) -> Result<Self, ConfigFileError> {
        if !value.is_object() {
            return Err(bad("<root>", "expected a JSON object"));
        }
        let mut flat = BTreeMap::new();
        flatten("", value, &mut flat);
        let mut cfg = FileConfig::default();
        for (key, v) in &flat {
            match key.as_str() {
                "sensor.a" => cfg.sensor_a = Some(as_f64(key, v)?),
                "sensor.b" => cfg.sensor_b = Some(as_f64(key, v)?),
                "sensor.r0_ohms" => cfg.r0_ohms = Some(as_f64(key, v)?),
                "sensor.rl_ohms" => cfg.rl_ohms = Some(as_f64(key, v)?),
                "sensor.vcc_volts" => cfg.vcc_volts = Some(as_f64(key, v)?),
                "sensor.adc_bits" => {
                    let bits = v
                        .as_u64()
                        .and_then(|b| u8::try_from(b).ok())
                        .ok_or_else(|| bad(key, "expected an integer"))?;
                    cfg.adc_bits = Some(bits);
                }
                "profile.name" => {
                    cfg.profile_name = Some(
                        v.as_str()
                            .ok_or_else(|| bad(key, "expected a string"))?
                            .to_owned(),
                    )
                }
                "profile.points" => {
                    cfg.profile_points =
                        Some(parse_points(v).ok_or_else(|| bad(key, "expected [[t, ppm], ...]"))?)
                }
                "profile.noise_sigma" => cfg.noise_sigma = Some(as_f64(key, v)?),
                "profile.seed" => {
                    cfg.seed = Some(
                        v.as_u64()
                            .ok_or_else(|| bad(key, "expected an unsigned integer"))?,
                    )
                }
                other => return Err(ConfigFileError::UnknownKey(other.to_owned())),
            }
        }
        if cfg.profile_name.is_some() && cfg.profile_points.is_some() {
            return Err(ConfigFileError::ProfileConflict);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigFileError::Read {
            path: path.to_owned(),
            source,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|source| ConfigFileError::Json {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&value)
    }

    /// Default curve with any configured values applied, validated.
    pub fn curve(&self) -> Result<SensorCurve, ConfigFileError> {
        let d = SensorCurve::default();
        let curve = SensorCurve {
            a: self.sensor_a.unwrap_or(d.a),
            b: self.sensor_b.unwrap_or(d.b),
            r0: self.r0_ohms.unwrap_or(d.r0),
            rl: self.rl_ohms.unwrap_or(d.rl),
            vcc: self.vcc_volts.unwrap_or(d.vcc),
            adc_bits: self.adc_bits.unwrap_or(d.adc_bits),
        };
        curve.validate()?;
        Ok(curve)
    }
}

/// Which ambient schedule drives a node.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    Night,
    Day,
    Constant(f64),
    File(PathBuf),
    Points(Vec<(f64, f64)>),
}

impl std::str::FromStr for ProfileSpec {
    type Err = ConfigFileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let spec_err = || ConfigFileError::ProfileSpec(s.to_owned());
        match s {
            "night" => Ok(ProfileSpec::Night),
            "day" => Ok(ProfileSpec::Day),
            _ => {
                if let Some(ppm) = s.strip_prefix("constant:") {
                    let ppm: f64 = ppm.trim().parse().map_err(|_| spec_err())?;
                    if !(ppm.is_finite() && ppm >= 0.0) {
                        return Err(spec_err());
                    }
                    Ok(ProfileSpec::Constant(ppm))
                } else if let Some(path) = s.strip_prefix("file:") {
                    if path.is_empty() {
                        return Err(spec_err());
                    }
                    Ok(ProfileSpec::File(PathBuf::from(path)))
                } else {
                    Err(spec_err())
                }
            }
        }
    }
}

impl ProfileSpec {
    fn points(&self) -> Result<Vec<(f64, f64)>, ConfigFileError> {
        Ok(match self {
            ProfileSpec::Night => AmbientProfile::night().points().to_vec(),
            ProfileSpec::Day => AmbientProfile::day().points().to_vec(),
            ProfileSpec::Constant(ppm) => vec![(0.0, *ppm)],
            ProfileSpec::Points(p) => p.clone(),
            ProfileSpec::File(path) => {
                let text = fs::read_to_string(path).map_err(|source| ConfigFileError::Read {
                    path: path.clone(),
                    source,
                })?;
                let value: Value =
                    serde_json::from_str(&text).map_err(|source| ConfigFileError::Json {
                        path: path.clone(),
                        source,
                    })?;
                parse_points(&value)
                    .ok_or_else(|| bad(&path.display().to_string(), "expected [[t, ppm], ...]"))?
            }
        })
    }

    pub fn build(
        &self,
        noise_sigma: Option<f64>,
        seed: Option<u64>,
    ) -> Result<AmbientProfile, ConfigFileError> {
        let profile = AmbientProfile::new(
            self.points()?,
            noise_sigma.unwrap_or(DEFAULT_NOISE_SIGMA),
            seed.unwrap_or(0),
        )?;
        Ok(profile)
    }
}

/// Resolves the profile from an optional flag, falling back to the config
/// file and then to the night preset.
pub fn resolve_profile(
    flag: Option<&str>,
    file: &FileConfig,
    noise_flag: Option<f64>,
    seed_flag: Option<u64>,
) -> Result<AmbientProfile, ConfigFileError> {
    let spec = match (flag, &file.profile_name, &file.profile_points) {
        (Some(f), _, _) => f.parse()?,
        (None, Some(name), _) => name.parse()?,
        (None, None, Some(points)) => ProfileSpec::Points(points.clone()),
        (None, None, None) => ProfileSpec::Night,
    };
    spec.build(noise_flag.or(file.noise_sigma), seed_flag.or(file.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flat_and_nested_keys_agree() {
        let flat = FileConfig::from_json(
            &json!({"sensor.a": 110.0, "sensor.adc_bits": 12, "profile.seed": 5}),
        )
        .unwrap();
        let nested = FileConfig::from_json(
            &json!({"sensor": {"a": 110.0, "adc_bits": 12}, "profile": {"seed": 5}}),
        )
        .unwrap();
        assert_eq!(flat, nested);
        assert_eq!(flat.curve().unwrap().adc_bits, 12);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            FileConfig::from_json(&json!({"sensor.c": 1})),
            Err(ConfigFileError::UnknownKey(_))
        ));
        assert!(FileConfig::from_json(&json!({"sensor": {"a": "x"}})).is_err());
    }

    #[test]
    fn invalid_curve_rejected() {
        let cfg = FileConfig::from_json(&json!({"sensor.b": 1.5})).unwrap();
        assert!(cfg.curve().is_err());
    }

    #[test]
    fn profile_specs() {
        assert_eq!("night".parse::<ProfileSpec>().unwrap(), ProfileSpec::Night);
        assert_eq!(
            "constant:180".parse::<ProfileSpec>().unwrap(),
            ProfileSpec::Constant(180.0)
        );
        assert!("constant:-1".parse::<ProfileSpec>().is_err());
        assert!("constant:abc".parse::<ProfileSpec>().is_err());
        assert!("evening".parse::<ProfileSpec>().is_err());
        assert_eq!(
            "file:/tmp/x.json".parse::<ProfileSpec>().unwrap(),
            ProfileSpec::File("/tmp/x.json".into())
        );
    }

    #[test]
    fn profile_file() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.json");
        fs::write(&good, "[[0, 10], [60, 20.5]]").unwrap();
        let p = ProfileSpec::File(good).build(Some(0.0), None).unwrap();
        assert_eq!(p.points(), &[(0.0, 10.0), (60.0, 20.5)]);

        let bad_json = dir.path().join("bad.json");
        fs::write(&bad_json, "[[0, 10], [60").unwrap();
        assert!(ProfileSpec::File(bad_json).build(None, None).is_err());
        let bad_order = dir.path().join("order.json");
        fs::write(&bad_order, "[[5, 10], [1, 3]]").unwrap();
        assert!(ProfileSpec::File(bad_order).build(None, None).is_err());
        assert!(ProfileSpec::File(dir.path().join("missing.json"))
            .build(None, None)
            .is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = FileConfig::from_json(
            &json!({"profile": {"name": "day", "noise_sigma": 3.0, "seed": 9}}),
        )
        .unwrap();
        let p = resolve_profile(None, &file, None, None).unwrap();
        assert_eq!(p.ppm_at(0.0), 30.0);
        assert_eq!(p.noise_sigma(), 3.0);
        assert_eq!(p.seed(), 9);
        let p = resolve_profile(Some("constant:12"), &file, Some(0.0), Some(1)).unwrap();
        assert_eq!(p.ppm_at(100.0), 12.0);
        assert_eq!(p.noise_sigma(), 0.0);
        assert_eq!(p.seed(), 1);
    }
}
