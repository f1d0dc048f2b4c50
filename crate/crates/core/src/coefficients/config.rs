use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::field::{CoefficientField, FieldSource, Family, SampledGrid};
use crate::error::{Error, Result};
use crate::linalg::{Point, SymMatrix};

/// Declarative description of a coefficient field, as it appears in a
/// manifest: `{family, params, lambda, Lambda, d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, toml::Value>,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub d: usize,
}

struct Params<'a> {
    map: &'a BTreeMap<String, toml::Value>,
    allowed: &'static [&'static str],
}

impl<'a> Params<'a> {
    fn new(map: &'a BTreeMap<String, toml::Value>, allowed: &'static [&'static str]) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::config(&format!("params.{k}"), "unknown parameter for this family"));
        }
        Ok(Self { map, allowed })
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        debug_assert!(self.allowed.contains(&key));
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => as_f64(v).ok_or_else(|| Error::config(&format!("params.{key}"), "expected a number")),
        }
    }

    fn point(&self, key: &str, d: usize) -> Result<Point> {
        match self.map.get(key) {
            None => Ok(Point::from_elem(0.0, d)),
            Some(toml::Value::Array(a)) => {
                let p = a
                    .iter()
                    .map(as_f64)
                    .collect::<Option<Point>>()
                    .ok_or_else(|| Error::config(&format!("params.{key}"), "expected numbers"))?;
                if p.len() != d {
                    return Err(Error::config(&format!("params.{key}"), format!("expected {d} entries")));
                }
                Ok(p)
            }
            Some(_) => Err(Error::config(&format!("params.{key}"), "expected an array")),
        }
    }
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

impl FieldConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("field", e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("field config serializes")
    }

    /// Builds the field; relative sampled-grid paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<CoefficientField> {
        let d = self.d;
        if d == 0 {
            return Err(Error::config("d", "dimension must be positive"));
        }
        let family = match self.family.as_str() {
            "const" => {
                let p = Params::new(&self.params, &["value", "matrix"])?;
                let m = match self.params.get("matrix") {
                    Some(toml::Value::Array(rows)) => {
                        let rows = rows
                            .iter()
                            .map(|r| match r {
                                toml::Value::Array(r) => r.iter().map(as_f64).collect::<Option<Vec<f64>>>(),
                                _ => None,
                            })
                            .collect::<Option<Vec<_>>>()
                            .ok_or_else(|| Error::config("params.matrix", "expected an array of numeric rows"))?;
                        SymMatrix::from_rows(&rows)
                            .filter(|m| m.dim() == d)
                            .ok_or_else(|| Error::config("params.matrix", format!("expected a {d}x{d} matrix")))?
                    }
                    Some(_) => return Err(Error::config("params.matrix", "expected an array of rows")),
                    None => SymMatrix::scaled_identity(d, p.f64("value", 1.0)?),
                };
                Family::Constant(m)
            }
            "t_sine" => {
                let p = Params::new(&self.params, &["base", "amplitude", "frequency"])?;
                Family::TSine {
                    base: p.f64("base", 2.0)?,
                    amplitude: p.f64("amplitude", 1.0)?,
                    frequency: p.f64("frequency", 1.0)?,
                }
            }
            "x_sine" => {
                let p = Params::new(&self.params, &["base", "amplitude", "frequency"])?;
                Family::XSine {
                    base: p.f64("base", 1.0)?,
                    amplitude: p.f64("amplitude", 0.3)?,
                    frequency: p.f64("frequency", 1.0)?,
                }
            }
            "holder" => {
                let p = Params::new(&self.params, &["base", "amplitude", "alpha", "clamp", "center"])?;
                let alpha = p.f64("alpha", 0.5)?;
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::config("params.alpha", "must lie in (0, 1]"));
                }
                let clamp = p.f64("clamp", 1.0)?;
                if !(clamp > 0.0) {
                    return Err(Error::config("params.clamp", "must be positive"));
                }
                Family::Holder {
                    base: p.f64("base", 1.0)?,
                    amplitude: p.f64("amplitude", 0.3)?,
                    alpha,
                    clamp,
                    center: p.point("center", d)?,
                }
            }
            "log_modulus" => {
                let p = Params::new(&self.params, &["base", "amplitude", "cutoff", "center"])?;
                let cutoff = p.f64("cutoff", (-2.0f64).exp())?;
                if !(cutoff > 0.0 && cutoff < 1.0) {
                    return Err(Error::config("params.cutoff", "must lie in (0, 1)"));
                }
                Family::LogModulus {
                    base: p.f64("base", 1.0)?,
                    amplitude: p.f64("amplitude", 0.5)?,
                    cutoff,
                    center: p.point("center", d)?,
                }
            }
            "sampled" => {
                Params::new(&self.params, &["path"])?;
                let rel = match self.params.get("path") {
                    Some(toml::Value::String(s)) => s.clone(),
                    Some(_) => return Err(Error::config("params.path", "expected a string")),
                    None => return Err(Error::config("params.path", "sampled fields need a CSV path")),
                };
                let path = match base_dir {
                    Some(dir) if Path::new(&rel).is_relative() => dir.join(&rel),
                    _ => Path::new(&rel).to_path_buf(),
                };
                let grid = SampledGrid::from_csv(&path, d)?;
                return CoefficientField::new(d, self.lambda, self.big_lambda, FieldSource::Sampled(grid));
            }
            other => {
                return Err(Error::config(
                    "family",
                    format!("unknown family `{other}` (expected const, t_sine, x_sine, holder, log_modulus, sampled)"),
                ))
            }
        };
        CoefficientField::new(d, self.lambda, self.big_lambda, FieldSource::Closed(family))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_and_builds_x_sine() {
        let cfg = FieldConfig::from_toml_str(
            r#"
            family = "x_sine"
            lambda = 0.7
            Lambda = 1.3
            d = 1
            [params]
            amplitude = 0.3
            "#,
        )
        .unwrap();
        let f = cfg.build(None).unwrap();
        assert_relative_eq!(f.evaluate(0.0, &[1.0]).unwrap().get(0, 0), 1.0 + 0.3 * 1f64.sin());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut params = BTreeMap::new();
        params.insert("alpha".to_string(), toml::Value::Float(0.5));
        let cfg = FieldConfig {
            family: "holder".into(),
            params,
            lambda: 1.0,
            big_lambda: 1.3,
            d: 1,
        };
        let back = FieldConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn errors_name_the_offending_key() {
        let cfg = FieldConfig::from_toml_str(
            "family = \"holder\"\nlambda = 1.0\nLambda = 2.0\nd = 1\n[params]\nalpah = 0.5\n",
        )
        .unwrap();
        match cfg.build(None) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "params.alpah"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = FieldConfig::from_toml_str("family = \"const\"\nlambda = 2.0\nLambda = 1.0\nd = 1\n").unwrap();
        match cfg.build(None) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "Lambda"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_matrix_parameter() {
        let cfg = FieldConfig::from_toml_str(
            "family = \"const\"\nlambda = 1.0\nLambda = 3.0\nd = 2\n[params]\nmatrix = [[1.0, 0.0], [0.0, 3.0]]\n",
        )
        .unwrap();
        let f = cfg.build(None).unwrap();
        assert_eq!(f.evaluate(0.0, &[0.0, 0.0]).unwrap(), SymMatrix::diagonal(&[1.0, 3.0]));
    }
}
