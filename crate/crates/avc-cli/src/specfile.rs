//! Channel spec files: JSON with probabilities as decimal strings.
//!
//! Probabilities stay strings through parse and serialize, so a
//! parse -> serialize -> parse round trip is exact on every numeric
//! field regardless of how the author formatted the decimals.

use avc_core::prob::{Alphabet, Channel};
use avc_core::strategy::SystemSpec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpecFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub x: Vec<String>,
    pub s: Vec<String>,
    pub y: Vec<String>,
    pub z: Vec<String>,
    /// `w[x][s]` is a distribution over Y, decimal strings.
    pub w: Vec<Vec<Vec<String>>>,
    /// `obs[s]` is a distribution over Z, decimal strings.
    pub obs: Vec<Vec<String>>,
}

fn parse_prob(s: &str, ctx: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("{ctx}: '{s}' is not a decimal number"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{ctx}: probability '{s}' must be finite and nonnegative"));
    }
    Ok(v)
}

fn check_row(row: &[f64], ctx: &str) -> Result<(), String> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(format!("{ctx} sums to {sum}, expected 1"));
    }
    Ok(())
}

impl ChannelSpecFile {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("spec parse error: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    /// Validates and lowers the file into a solver-ready system spec.
    pub fn to_system_spec(&self) -> Result<SystemSpec, String> {
        let nx = self.x.len();
        let ns = self.s.len();
        let ny = self.y.len();
        let nz = self.z.len();
        if nx == 0 || ns == 0 || ny == 0 || nz == 0 {
            return Err("alphabets must be nonempty".into());
        }
        if self.w.len() != nx {
            return Err(format!("w has {} x-entries, expected {nx}", self.w.len()));
        }
        let mut w_rows: Vec<Vec<f64>> = Vec::with_capacity(nx * ns);
        for (xi, per_x) in self.w.iter().enumerate() {
            if per_x.len() != ns {
                return Err(format!(
                    "w[{}] has {} s-entries, expected {ns}",
                    self.x[xi],
                    per_x.len()
                ));
            }
            for (si, row) in per_x.iter().enumerate() {
                let ctx = format!("W row (x={}, s={})", self.x[xi], self.s[si]);
                if row.len() != ny {
                    return Err(format!("{ctx} has {} entries, expected {ny}", row.len()));
                }
                let parsed: Vec<f64> = row
                    .iter()
                    .map(|p| parse_prob(p, &ctx))
                    .collect::<Result<_, _>>()?;
                check_row(&parsed, &ctx)?;
                w_rows.push(parsed);
            }
        }
        let mut obs_rows: Vec<Vec<f64>> = Vec::with_capacity(ns);
        if self.obs.len() != ns {
            return Err(format!("obs has {} rows, expected {ns}", self.obs.len()));
        }
        for (si, row) in self.obs.iter().enumerate() {
            let ctx = format!("obs row (s={})", self.s[si]);
            if row.len() != nz {
                return Err(format!("{ctx} has {} entries, expected {nz}", row.len()));
            }
            let parsed: Vec<f64> = row
                .iter()
                .map(|p| parse_prob(p, &ctx))
                .collect::<Result<_, _>>()?;
            check_row(&parsed, &ctx)?;
            obs_rows.push(parsed);
        }
        let x = Alphabet::new(self.x.clone()).map_err(|e| e.to_string())?;
        let s = Alphabet::new(self.s.clone()).map_err(|e| e.to_string())?;
        let y = Alphabet::new(self.y.clone()).map_err(|e| e.to_string())?;
        let z = Alphabet::new(self.z.clone()).map_err(|e| e.to_string())?;
        let w = Channel::from_rows(x.product(&s), y.clone(), &w_rows)
            .map_err(|e| e.to_string())?;
        let obs = Channel::from_rows(s.clone(), z.clone(), &obs_rows)
            .map_err(|e| e.to_string())?;
        SystemSpec::new(x, s, y, z, w, obs).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn xor_json() -> String {
        r#"{
            "name": "xor-identity",
            "x": ["0", "1"], "s": ["0", "1"], "y": ["0", "1"], "z": ["0", "1"],
            "w": [
                [["1", "0"], ["0", "1"]],
                [["0", "1"], ["1", "0"]]
            ],
            "obs": [["1.0", "0.0"], ["0.00", "1.00"]]
        }"#
        .to_string()
    }

    #[test]
    fn round_trip_is_exact() {
        let a = ChannelSpecFile::from_json(&xor_json()).unwrap();
        let b = ChannelSpecFile::from_json(&a.to_json()).unwrap();
        // strings survive verbatim, including "0.00"
        assert_eq!(a, b);
        assert_eq!(b.obs[1][1], "1.00");
    }

    #[test]
    fn lowering_and_validation() {
        let spec = ChannelSpecFile::from_json(&xor_json())
            .unwrap()
            .to_system_spec()
            .unwrap();
        assert_eq!(spec.x_alphabet().size(), 2);
        assert!((spec.w_prob(1, 0, 1) - 1.0).abs() < 1e-15);

        let mut bad = ChannelSpecFile::from_json(&xor_json()).unwrap();
        bad.w[1][0][0] = "0.9".into();
        bad.w[1][0][1] = "0.0".into();
        let err = bad.to_system_spec().unwrap_err();
        assert!(err.contains("(x=1, s=0)"), "{err}");
        assert!(err.contains("0.9"), "{err}");
    }
}
