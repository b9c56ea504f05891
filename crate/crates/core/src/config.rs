//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `regime` | `non_private`, `jdp`, `local_jdp`; comma list sweeps | `jdp` |
//! | `T` | horizon | required |
//! | `d` | input dimension | `2` |
//! | `nu` | lengthscale, or one per dimension (comma list) | `1` |
//! | `m_bar` | quadrature nodes per dimension | `8` |
//! | `feature_kind` | `qff` or `rff` | `qff` |
//! | `alpha` | privacy budget; comma list sweeps | `1` |
//! | `beta_priv` | privacy failure probability; comma list sweeps | `0.1` |
//! | `B`, `rho`, `lambda`, `zeta` | confidence parameters | `1`, `0.5`, `300`, `0.1` |
//! | `n_candidates` | decision-set size | `25` |
//! | `trials`, `seed`, `out_dir` | harness settings | `1`, `0`, `out` |
//! | `env` | `synthetic` or `camelback` | `synthetic` |
//! | `anchors`, `weights` | fixed synthetic function: `x1 x2; y1 y2; ...` and `a, b, ...` | drawn per trial |
//! | `noise_multiplier` | scales the calibrated privacy noise | `1` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::bandit::{Regime, RunConfig};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::features::FeatureKind;

pub const KEYS: &[&str] = &[
    "regime",
    "T",
    "d",
    "nu",
    "m_bar",
    "feature_kind",
    "alpha",
    "beta_priv",
    "B",
    "rho",
    "lambda",
    "zeta",
    "n_candidates",
    "trials",
    "seed",
    "out_dir",
    "env",
    "anchors",
    "weights",
    "noise_multiplier",
];

pub const DEFAULT_LAMBDA: f64 = 300.0;
pub const DEFAULT_M_BAR: usize = 8;

/// A base run configuration plus the sweep and harness settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Sweep fields (`regime`, `alpha`, `beta_priv`) hold the first sweep value.
    pub base: RunConfig,
    pub regimes: Vec<Regime>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub trials: usize,
    pub out_dir: PathBuf,
    pub master_seed: u64,
}

fn key_err(key: &str, msg: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_one<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| key_err(key, format!("cannot parse {raw:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_one(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(key_err(key, "empty list"));
    }
    Ok(items)
}

/// Splits the text into key/value pairs, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got {line:?}",
                lineno + 1
            ))
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(key_err(k, format!("unknown key on line {}", lineno + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(key_err(k, format!("repeated on line {}", lineno + 1)));
        }
    }
    Ok(out)
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_pairs(text)?;
        let get = |k: &str| kv.get(k).map(String::as_str);
        fn num<T: FromStr>(kv: &BTreeMap<String, String>, key: &str, default: T) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            kv.get(key).map_or(Ok(default), |v| parse_one(key, v))
        }

        let horizon: usize = get("T")
            .ok_or_else(|| key_err("T", "missing (the horizon is required)"))
            .and_then(|v| parse_one("T", v))?;
        let env_kind = get("env").unwrap_or("synthetic").to_ascii_lowercase();
        let d: usize = num(&kv, "d", 2)?;
        if d == 0 {
            return Err(key_err("d", "must be at least 1"));
        }
        let n_candidates: usize = num(&kv, "n_candidates", 25)?;
        let env = match env_kind.as_str() {
            "synthetic" => {
                let function = match (get("anchors"), get("weights")) {
                    (None, None) => None,
                    (Some(a), Some(w)) => {
                        Some((parse_anchors(a, d)?, parse_list::<f64>("weights", w)?))
                    }
                    (Some(_), None) => {
                        return Err(key_err("weights", "required together with anchors"))
                    }
                    (None, Some(_)) => {
                        return Err(key_err("anchors", "required together with weights"))
                    }
                };
                EnvSpec::Synthetic {
                    d,
                    n_candidates,
                    function,
                }
            }
            "camelback" | "camel" => {
                if d != 2 {
                    return Err(key_err("d", "camelback is two-dimensional"));
                }
                if get("anchors").is_some() || get("weights").is_some() {
                    return Err(key_err(
                        "anchors",
                        "only valid for the synthetic environment",
                    ));
                }
                EnvSpec::Camelback { n_candidates }
            }
            other => return Err(key_err("env", format!("unknown environment {other:?}"))),
        };

        let nu = get("nu").map_or(Ok(vec![1.0]), |v| parse_list::<f64>("nu", v))?;
        let lengthscales = match nu.len() {
            1 => vec![nu[0]; d],
            n if n == d => nu,
            n => return Err(key_err("nu", format!("{n} lengthscales for d = {d}"))),
        };
        let feature_kind = get("feature_kind").map_or(Ok(FeatureKind::Qff), |v| {
            v.parse::<FeatureKind>()
                .map_err(|e| key_err("feature_kind", e.to_string()))
        })?;
        let regimes = get("regime").map_or(Ok(vec![Regime::Jdp]), |v| {
            v.split(',')
                .map(|s| {
                    s.parse::<Regime>()
                        .map_err(|e| key_err("regime", e.to_string()))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let alphas = get("alpha").map_or(Ok(vec![1.0]), |v| parse_list::<f64>("alpha", v))?;
        let betas =
            get("beta_priv").map_or(Ok(vec![0.1]), |v| parse_list::<f64>("beta_priv", v))?;
        let trials: usize = num(&kv, "trials", 1)?;
        if trials == 0 {
            return Err(key_err("trials", "must be at least 1"));
        }
        let master_seed: u64 = num(&kv, "seed", 0)?;
        let out_dir = PathBuf::from(get("out_dir").unwrap_or("out"));

        let base = RunConfig {
            regime: regimes[0],
            horizon,
            lengthscales,
            m_bar: num(&kv, "m_bar", DEFAULT_M_BAR)?,
            feature_kind,
            alpha: alphas[0],
            beta_priv: betas[0],
            b: num(&kv, "B", 1.0)?,
            rho: num(&kv, "rho", 0.5)?,
            lambda: num(&kv, "lambda", DEFAULT_LAMBDA)?,
            zeta: num(&kv, "zeta", 0.1)?,
            noise_multiplier: num(&kv, "noise_multiplier", 1.0)?,
            env,
            seed: master_seed,
        };
        let spec = ExperimentSpec {
            base,
            regimes,
            alphas,
            betas,
            trials,
            out_dir,
            master_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Validates every sweep cell.
    pub fn validate(&self) -> Result<()> {
        for cell in self.cells() {
            cell.validate()?;
        }
        if let EnvSpec::Synthetic {
            function: Some((anchors, weights)),
            ..
        } = &self.base.env
        {
            crate::envs::SyntheticFunction::new(
                anchors.clone(),
                weights.clone(),
                self.base.kernel()?,
            )
            .map_err(|e| key_err("weights", e.to_string()))?;
        }
        Ok(())
    }

    /// One configuration per sweep cell, in output order. The non-private regime
    /// ignores the privacy sweep and contributes a single cell.
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &regime in &self.regimes {
            if regime == Regime::NonPrivate {
                out.push(RunConfig {
                    regime,
                    ..self.base.clone()
                });
                continue;
            }
            for &beta_priv in &self.betas {
                for &alpha in &self.alphas {
                    out.push(RunConfig {
                        regime,
                        alpha,
                        beta_priv,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }

    /// Canonical text form; parsing it yields an equal spec.
    pub fn to_config_string(&self) -> String {
        let b = &self.base;
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut s = String::new();
        let regimes: Vec<&str> = self.regimes.iter().map(|r| r.as_str()).collect();
        let _ = writeln!(s, "regime = {}", regimes.join(", "));
        let _ = writeln!(s, "T = {}", b.horizon);
        match &b.env {
            EnvSpec::Synthetic { d, function, .. } => {
                let _ = writeln!(s, "env = synthetic");
                let _ = writeln!(s, "d = {d}");
                if let Some((anchors, weights)) = function {
                    let rows: Vec<String> = anchors
                        .iter()
                        .map(|a| {
                            a.iter()
                                .map(|x| format!("{x:?}"))
                                .collect::<Vec<_>>()
                                .join(" ")
                        })
                        .collect();
                    let _ = writeln!(s, "anchors = {}", rows.join("; "));
                    let _ = writeln!(s, "weights = {}", list(weights));
                }
            }
            EnvSpec::Camelback { .. } => {
                let _ = writeln!(s, "env = camelback");
                let _ = writeln!(s, "d = 2");
            }
        }
        let _ = writeln!(s, "n_candidates = {}", b.env.n_candidates());
        let _ = writeln!(s, "nu = {}", list(&b.lengthscales));
        let _ = writeln!(s, "m_bar = {}", b.m_bar);
        let _ = writeln!(s, "feature_kind = {}", b.feature_kind.as_str());
        let _ = writeln!(s, "alpha = {}", list(&self.alphas));
        let _ = writeln!(s, "beta_priv = {}", list(&self.betas));
        let _ = writeln!(s, "B = {:?}", b.b);
        let _ = writeln!(s, "rho = {:?}", b.rho);
        let _ = writeln!(s, "lambda = {:?}", b.lambda);
        let _ = writeln!(s, "zeta = {:?}", b.zeta);
        let _ = writeln!(s, "noise_multiplier = {:?}", b.noise_multiplier);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.master_seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }

    /// SHA-256 of the canonical form without the output directory, which does not
    /// affect results.
    pub fn hash(&self) -> String {
        let canonical: String = self
            .to_config_string()
            .lines()
            .filter(|l| !l.starts_with("out_dir"))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn parse_anchors(raw: &str, d: usize) -> Result<Vec<Vec<f64>>> {
    raw.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|row| {
            let v: Vec<f64> = row
                .split_whitespace()
                .map(|x| parse_one("anchors", x))
                .collect::<Result<_>>()?;
            if v.len() != d {
                return Err(key_err(
                    "anchors",
                    format!("anchor {row:?} does not have {d} coordinates"),
                ));
            }
            Ok(v)
        })
        .collect()
}

/// Reads the `config_hash` recorded in an archived config, if any.
pub fn recorded_hash(text: &str) -> Option<String> {
    text.lines().find_map(|l| {
        l.trim()
            .strip_prefix("# config_hash:")
            .map(|h| h.trim().to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "T = 16\n";

    #[test]
    fn defaults() {
        let spec = ExperimentSpec::parse(MINIMAL).unwrap();
        assert_eq!(spec.base.horizon, 16);
        assert_eq!(spec.base.lengthscales, vec![1.0, 1.0]);
        assert_eq!(spec.base.m_bar, DEFAULT_M_BAR);
        assert_eq!(spec.base.lambda, DEFAULT_LAMBDA);
        assert_eq!(spec.base.rho, 0.5);
        assert_eq!(spec.regimes, vec![Regime::Jdp]);
        assert_eq!(spec.cells().len(), 1);
    }

    #[test]
    fn sweeps_expand_to_cells() {
        let spec = ExperimentSpec::parse(
            "T = 8\nregime = non_private, jdp, local_jdp\nalpha = 0.1, 1, 10\nbeta_priv = 0.1, 0.5\n",
        )
        .unwrap();
        let cells = spec.cells();
        assert_eq!(cells.len(), 1 + 6 + 6);
        assert_eq!(cells[0].regime, Regime::NonPrivate);
        assert_eq!((cells[1].alpha, cells[1].beta_priv), (0.1, 0.1));
        assert_eq!((cells[4].alpha, cells[4].beta_priv), (0.1, 0.5));
    }

    #[test]
    fn round_trip_and_hash() {
        let text = "# comment\nT = 32\nregime = jdp\nalpha = 0.5, 2\nenv = synthetic\nd = 1\n\
                    anchors = 0.1; -0.5; 1.0; 0.0\nweights = 0.2, 0.2, -0.1, 0.3\nnu = 0.7\nseed = 9\n";
        let spec = ExperimentSpec::parse(text).unwrap();
        let again = ExperimentSpec::parse(&spec.to_config_string()).unwrap();
        assert_eq!(spec, again);
        assert_eq!(spec.hash(), again.hash());
        let mut moved = spec.clone();
        moved.out_dir = PathBuf::from("/elsewhere");
        assert_eq!(moved.hash(), spec.hash());
        let mut reseeded = spec.clone();
        reseeded.master_seed = 10;
        assert_ne!(reseeded.hash(), spec.hash());
    }

    fn bad_key(text: &str) -> String {
        match ExperimentSpec::parse(text) {
            Err(Error::ConfigKey { key, .. }) => key,
            other => panic!("expected a key error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(bad_key("T = 4\nfoo = 1\n"), "foo");
        assert_eq!(bad_key("alpha = 1\n"), "T");
        assert_eq!(bad_key("T = 4\nalpha = -1\n"), "alpha");
        assert_eq!(bad_key("T = 4\nbeta_priv = 1.5\n"), "beta_priv");
        assert_eq!(bad_key("T = 4\nregime = private\n"), "regime");
        assert_eq!(bad_key("T = 4\nnu = 1, 2, 3\n"), "nu");
        assert_eq!(bad_key("T = x\n"), "T");
        assert_eq!(bad_key("T = 4\nT = 5\n"), "T");
        assert_eq!(bad_key("T = 4\nenv = camelback\nd = 3\n"), "d");
        assert_eq!(bad_key("T = 4\nanchors = 0 0\n"), "weights");
        assert_eq!(bad_key("T = 4\nanchors = 0 0\nweights = 2\n"), "weights");
        assert_eq!(bad_key("T = 4\ntrials = 0\n"), "trials");
        assert!(matches!(
            ExperimentSpec::parse("T 4\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_private_ignores_privacy_values() {
        let spec = ExperimentSpec::parse("T = 4\nregime = non_private\nalpha = 0\n").unwrap();
        assert_eq!(spec.cells().len(), 1);
    }

    #[test]
    fn recorded_hash_is_found() {
        assert_eq!(
            recorded_hash("# config_hash: abc\nT = 1\n"),
            Some("abc".into())
        );
        assert_eq!(recorded_hash("T = 1\n"), None);
    }
}
