//! Named schemes and their `key = value` text form.

use std::path::Path;

use super::coeffs::{check_symmetry, ReducedCoeffs, SplitCoeffs};
use super::compose::{repeat_scheme, triple_jump};
use super::order::project_to_fourth_order;
use crate::error::{Error, Result};

/// Symmetry tolerance used when classifying schemes for cost accounting.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeDescriptor {
    pub name: String,
    pub coeffs: SplitCoeffs,
    pub reduced: Option<ReducedCoeffs>,
    pub symmetric: bool,
}

impl SchemeDescriptor {
    pub fn from_coeffs(name: impl Into<String>, coeffs: SplitCoeffs) -> Self {
        let symmetric = check_symmetry(&coeffs, SYMMETRY_TOL);
        let reduced = coeffs.reduce(SYMMETRY_TOL).ok();
        Self {
            name: name.into(),
            coeffs,
            reduced,
            symmetric,
        }
    }

    pub fn from_reduced(name: impl Into<String>, reduced: ReducedCoeffs) -> Self {
        Self {
            name: name.into(),
            coeffs: reduced.expand(),
            reduced: Some(reduced),
            symmetric: true,
        }
    }

    pub fn stages(&self) -> usize {
        self.coeffs.stages()
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = format!(
            "name = {}\nK = {}\nsymmetric = {}\n",
            self.name,
            self.stages(),
            self.symmetric
        );
        if let Some(r) = &self.reduced {
            out.push_str(&format!("gamma = {}\n", list(r.gamma())));
        }
        out.push_str(&format!("alpha = {}\n", list(self.coeffs.alpha())));
        out.push_str(&format!("beta = {}\n", list(self.coeffs.beta())));
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut name = None;
        let mut k = None;
        let mut symmetric = None;
        let mut gamma = None;
        let mut alpha = None;
        let mut beta = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(origin, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let value = value.trim();
            match key.trim() {
                "name" => name = Some(value.to_string()),
                "K" => {
                    k = Some(value.parse::<usize>().map_err(|e| {
                        Error::format(origin, format!("line {}: bad K: {e}", lineno + 1))
                    })?)
                }
                "symmetric" => {
                    symmetric = Some(value.parse::<bool>().map_err(|e| {
                        Error::format(origin, format!("line {}: bad flag: {e}", lineno + 1))
                    })?)
                }
                "gamma" => gamma = Some(parse_list(value, origin)?),
                "alpha" => alpha = Some(parse_list(value, origin)?),
                "beta" => beta = Some(parse_list(value, origin)?),
                other => {
                    return Err(Error::format(origin, format!("unknown key `{other}`")));
                }
            }
        }
        let name = name.unwrap_or_else(|| "unnamed".to_string());
        let reduced = match gamma {
            Some(g) => {
                let k = k.unwrap_or(g.len() + 2);
                Some(ReducedCoeffs::new(k, g)?)
            }
            None => None,
        };
        let coeffs = match (alpha, beta) {
            (Some(a), Some(b)) => SplitCoeffs::new(a, b)?,
            (None, None) => reduced
                .as_ref()
                .map(ReducedCoeffs::expand)
                .ok_or_else(|| Error::format(origin, "need alpha/beta or gamma"))?,
            _ => return Err(Error::format(origin, "alpha and beta must both be present")),
        };
        if let Some(k) = k {
            if k != coeffs.stages() {
                return Err(Error::format(
                    origin,
                    format!("K = {k} but coefficient vectors have length {}", coeffs.stages()),
                ));
            }
        }
        if let Some(r) = &reduced {
            let e = r.expand();
            let agree = e
                .alpha()
                .iter()
                .chain(e.beta())
                .zip(coeffs.alpha().iter().chain(coeffs.beta()))
                .all(|(x, y)| (x - y).abs() <= 1e-14);
            if !agree {
                return Err(Error::format(origin, "gamma does not expand to alpha/beta"));
            }
        }
        let symmetric = symmetric.unwrap_or_else(|| check_symmetry(&coeffs, SYMMETRY_TOL));
        Ok(Self {
            name,
            coeffs,
            reduced,
            symmetric,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parse a comma and/or whitespace separated list of decimals.
pub fn parse_list(value: &str, origin: &Path) -> Result<Vec<f64>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace() || c == '[' || c == ']')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::format(origin, format!("bad number `{s}`: {e}")))
        })
        .collect()
}

pub const LEARN5A: [f64; 3] = [0.3627, -0.1003, -0.1353];
pub const LEARN8A: [f64; 6] = [0.2135, -0.0582, 0.4125, -0.1352, 0.4443, -0.0251];
pub const LEARN8B: [f64; 6] = [0.1178, 0.3876, 0.3660, 0.2922, 0.0564, -0.0212];

pub const BUILTIN_NAMES: [&str; 8] = [
    "trotter",
    "strang",
    "yoshida",
    "strang4x",
    "learn5a",
    "learn8a",
    "learn8b",
    "learn5aproj",
];

/// Compiled-in reference and learned schemes.
///
/// `yoshida` and `strang4x` are built by composition; `learn5aproj` is the
/// fourth-order projection of `learn5a`.
pub fn builtin(name: &str) -> Option<SchemeDescriptor> {
    let reduced = |g: &[f64]| ReducedCoeffs::from_gamma(g.to_vec()).expect("valid table entry");
    let d = match name.to_ascii_lowercase().as_str() {
        "trotter" => SchemeDescriptor::from_coeffs("trotter", SplitCoeffs::trotter()),
        "strang" => SchemeDescriptor::from_coeffs("strang", SplitCoeffs::strang()),
        "yoshida" => SchemeDescriptor::from_coeffs(
            "yoshida",
            triple_jump(&SplitCoeffs::strang(), 2).expect("strang is symmetric"),
        ),
        "strang4x" => SchemeDescriptor::from_coeffs(
            "strang4x",
            repeat_scheme(&SplitCoeffs::strang(), 4).expect("n >= 1"),
        ),
        "learn5a" => SchemeDescriptor::from_reduced("learn5a", reduced(&LEARN5A)),
        "learn8a" => SchemeDescriptor::from_reduced("learn8a", reduced(&LEARN8A)),
        "learn8b" => SchemeDescriptor::from_reduced("learn8b", reduced(&LEARN8B)),
        "learn5aproj" => SchemeDescriptor::from_reduced(
            "learn5aproj",
            project_to_fourth_order(&reduced(&LEARN5A)).expect("projection converges"),
        ),
        _ => return None,
    };
    Some(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_resolve() {
        for name in BUILTIN_NAMES {
            let d = builtin(name).unwrap();
            assert_eq!(d.name, name);
        }
        assert!(builtin("nope").is_none());
        assert!(!builtin("trotter").unwrap().symmetric);
        assert!(builtin("trotter").unwrap().reduced.is_none());
        assert_eq!(builtin("strang").unwrap().reduced.unwrap().gamma(), &[] as &[f64]);
    }

    #[test]
    fn text_round_trip() {
        for name in BUILTIN_NAMES {
            let d = builtin(name).unwrap();
            let text = d.to_text();
            let back = SchemeDescriptor::parse(&text, Path::new("mem")).unwrap();
            assert_eq!(back, d, "{text}");
        }
    }

    #[test]
    fn gamma_only_file() {
        let d = SchemeDescriptor::parse("gamma = 0.125, 0.25, 0.25\n", Path::new("mem")).unwrap();
        assert_eq!(d.stages(), 5);
        assert!(d.symmetric);
    }

    #[test]
    fn rejects_inconsistent_gamma() {
        let text = "K = 5\ngamma = 0.125, 0.25, 0.25\nalpha = 1, 0, 0, 0, 0\nbeta = 1, 0, 0, 0, 0\n";
        assert!(SchemeDescriptor::parse(text, Path::new("mem")).is_err());
    }

    #[test]
    fn literal_precision() {
        let text = builtin("yoshida").unwrap().to_text();
        let alpha_line = text.lines().find(|l| l.starts_with("alpha")).unwrap();
        let first = alpha_line.split('=').nth(1).unwrap().split(',').next().unwrap().trim();
        let mantissa = first.split('e').next().unwrap().replace(['-', '.'], "");
        assert!(mantissa.len() >= 15);
    }
}
