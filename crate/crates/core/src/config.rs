//! Run configuration.
//!
//! The text format is one `key = value` pair per line with dotted keys
//! (`model.m1 = 512`). `[section]` headers prefix the keys that follow them,
//! `#` starts a comment. A document whose first non-blank character is `{` is
//! read as JSON instead, either nested (`{"model": {"m1": 512}}`) or flat
//! (`{"model.m1": 512}`). Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::activations::{Activation, DEFAULT_QUAD_ORDER};
use crate::error::{Error, Result};
use crate::kernel::DEFAULT_RANK_TOL;
use crate::mf_model::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Finite,
    Mf,
    Compare,
    SweepWidth,
    SweepKernelMc,
    NoiseStudy,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "finite" => RunMode::Finite,
            "mf" => RunMode::Mf,
            "compare" => RunMode::Compare,
            "sweep_width" => RunMode::SweepWidth,
            "sweep_kernel_mc" => RunMode::SweepKernelMc,
            "noise_study" => RunMode::NoiseStudy,
            other => return Err(Error::Config(format!("unknown run.mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelModeCfg {
    Analytic,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub name: String,
    pub out_dir: PathBuf,
    pub mode: RunMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSection {
    pub task: u32,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Optional CSV files replacing the synthetic task.
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSection {
    pub mode: KernelModeCfg,
    pub m1: usize,
    pub seed: u64,
    pub rank_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSection {
    pub m1: usize,
    pub m2: usize,
    pub alpha: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub seed: u64,
    pub sigma1: Activation,
    pub sigma2: Activation,
    /// Output weights start uniform on `{-a_scale, +a_scale}`.
    pub a_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub dt: f64,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfSection {
    /// `None` picks the regime default.
    #[serde(rename = "M")]
    pub m: Option<usize>,
    /// `None` derives the regime from `model.alpha`.
    pub regime: Option<Regime>,
    pub seed: u64,
    pub quad_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSection {
    pub delta: f64,
    /// `None` uses `model.a_scale`.
    pub a_hat: Option<f64>,
    pub xi_lo: f64,
    pub xi_hi: f64,
    pub snapshots: bool,
    pub test_loss: bool,
    /// `dt` threshold for the stability heuristic `dt * lambda_max(G) < limit`.
    pub stability_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSection {
    pub widths: Vec<usize>,
    pub m1_list: Vec<usize>,
    pub seeds: usize,
    pub t_eval: f64,
    pub noise_sigmas: Vec<f64>,
    pub loss_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub kernel: KernelSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub mf: MfSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
}

impl Serialize for Regime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection {
                name: "run".into(),
                out_dir: PathBuf::from("out"),
                mode: RunMode::Mf,
            },
            data: DataSection {
                task: 1,
                noise_sigma: 0.0,
                seed: 0,
                train_csv: None,
                test_csv: None,
            },
            kernel: KernelSection {
                mode: KernelModeCfg::Analytic,
                m1: 4096,
                seed: 0,
                rank_tol: DEFAULT_RANK_TOL,
            },
            model: ModelSection {
                m1: 512,
                m2: 512,
                alpha: 0.5,
                beta_a: 0.0,
                beta_b: 0.5,
                seed: 0,
                sigma1: Activation::Relu,
                sigma2: Activation::Tanh,
                a_scale: 1.0,
            },
            train: TrainSection {
                dt: 0.05,
                total_time: 200.0,
                log_every: 20,
            },
            mf: MfSection {
                m: None,
                regime: None,
                seed: 0,
                quad_order: DEFAULT_QUAD_ORDER,
            },
            analysis: AnalysisSection {
                delta: 0.1,
                a_hat: None,
                xi_lo: -1.0,
                xi_hi: 1.0,
                snapshots: true,
                test_loss: true,
                stability_limit: 2.0,
            },
            sweep: SweepSection {
                widths: vec![50, 200, 800],
                m1_list: vec![100, 400, 1600, 6400],
                seeds: 5,
                t_eval: 5.0,
                noise_sigmas: vec![0.0, 0.25, 0.5],
                loss_threshold: 0.01,
            },
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, what))
}

fn float(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v, "a number")?;
    if !x.is_finite() {
        return Err(bad(key, v, "a finite number"));
    }
    Ok(x)
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<Vec<T>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|s| num(key, s.trim(), what)).collect()
}

fn optional(v: &str) -> Option<&str> {
    match v {
        "" | "auto" | "none" | "null" => None,
        s => Some(s),
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "run.name" => {
                if v.is_empty() || v.contains(['/', '\\']) || v == "." || v == ".." {
                    return Err(bad(key, v, "a non-empty name without path separators"));
                }
                self.run.name = v.to_string();
            }
            "run.out_dir" => self.run.out_dir = PathBuf::from(v),
            "run.mode" => self.run.mode = v.parse()?,
            "data.task" => self.data.task = num(key, v, "1 or 2")?,
            "data.noise_sigma" => self.data.noise_sigma = float(key, v)?,
            "data.seed" => self.data.seed = num(key, v, "an unsigned integer")?,
            "data.train_csv" => self.data.train_csv = optional(v).map(PathBuf::from),
            "data.test_csv" => self.data.test_csv = optional(v).map(PathBuf::from),
            "kernel.mode" => {
                self.kernel.mode = match v {
                    "analytic" => KernelModeCfg::Analytic,
                    "mc" => KernelModeCfg::Mc,
                    _ => return Err(bad(key, v, "\"analytic\" or \"mc\"")),
                }
            }
            "kernel.m1" => self.kernel.m1 = num(key, v, "a positive integer")?,
            "kernel.seed" => self.kernel.seed = num(key, v, "an unsigned integer")?,
            "kernel.rank_tol" => self.kernel.rank_tol = float(key, v)?,
            "model.m1" => self.model.m1 = num(key, v, "a positive integer")?,
            "model.m2" => self.model.m2 = num(key, v, "a positive integer")?,
            "model.alpha" => self.model.alpha = float(key, v)?,
            "model.beta_a" => self.model.beta_a = float(key, v)?,
            "model.beta_b" => self.model.beta_b = float(key, v)?,
            "model.seed" => self.model.seed = num(key, v, "an unsigned integer")?,
            "model.sigma1" => self.model.sigma1 = v.parse()?,
            "model.sigma2" => self.model.sigma2 = v.parse()?,
            "model.a_scale" => self.model.a_scale = float(key, v)?,
            "train.dt" => self.train.dt = float(key, v)?,
            "train.T" => self.train.total_time = float(key, v)?,
            "train.log_every" => self.train.log_every = num(key, v, "a positive integer")?,
            "mf.M" => {
                self.mf.m = optional(v)
                    .map(|s| num(key, s, "a positive integer"))
                    .transpose()?
            }
            "mf.regime" => self.mf.regime = optional(v).map(str::parse).transpose()?,
            "mf.seed" => self.mf.seed = num(key, v, "an unsigned integer")?,
            "mf.quad_order" => self.mf.quad_order = num(key, v, "a positive integer")?,
            "analysis.delta" => self.analysis.delta = float(key, v)?,
            "analysis.a_hat" => {
                self.analysis.a_hat = optional(v).map(|s| float(key, s)).transpose()?
            }
            "analysis.xi_lo" => self.analysis.xi_lo = float(key, v)?,
            "analysis.xi_hi" => self.analysis.xi_hi = float(key, v)?,
            "analysis.snapshots" => self.analysis.snapshots = boolean(key, v)?,
            "analysis.test_loss" => self.analysis.test_loss = boolean(key, v)?,
            "analysis.stability_limit" => self.analysis.stability_limit = float(key, v)?,
            "sweep.widths" => self.sweep.widths = list(key, v, "a list of positive integers")?,
            "sweep.m1_list" => self.sweep.m1_list = list(key, v, "a list of positive integers")?,
            "sweep.seeds" => self.sweep.seeds = num(key, v, "a positive integer")?,
            "sweep.t_eval" => self.sweep.t_eval = float(key, v)?,
            "sweep.noise_sigmas" => self.sweep.noise_sigmas = list(key, v, "a list of numbers")?,
            "sweep.loss_threshold" => self.sweep.loss_threshold = float(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Range checks that do not need a dataset or a kernel.
    pub fn check(&self) -> Result<()> {
        let c = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        c(
            self.data.task == 1 || self.data.task == 2,
            "data.task must be 1 or 2",
        )?;
        c(
            self.data.noise_sigma >= 0.0,
            "data.noise_sigma must be >= 0",
        )?;
        c(self.kernel.m1 >= 1, "kernel.m1 must be >= 1")?;
        c(
            self.kernel.rank_tol > 0.0 && self.kernel.rank_tol < 1.0,
            "kernel.rank_tol must lie in (0, 1)",
        )?;
        c(
            self.model.m1 >= 1 && self.model.m2 >= 1,
            "model.m1 and model.m2 must be >= 1",
        )?;
        c(self.model.alpha >= 0.0, "model.alpha must be >= 0")?;
        c(
            self.model.beta_a >= 0.0 && self.model.beta_b >= 0.0,
            "model.beta_a and model.beta_b must be >= 0",
        )?;
        c(self.model.a_scale > 0.0, "model.a_scale must be > 0")?;
        c(self.train.dt > 0.0, "train.dt must be > 0")?;
        c(self.train.total_time >= 0.0, "train.T must be >= 0")?;
        c(self.train.log_every >= 1, "train.log_every must be >= 1")?;
        c(self.mf.m.is_none_or(|m| m >= 1), "mf.M must be >= 1")?;
        c(
            self.mf.quad_order >= 1 && self.mf.quad_order <= 200,
            "mf.quad_order must lie in [1, 200]",
        )?;
        c(
            self.analysis.delta > 0.0 && self.analysis.delta <= 1.0,
            "analysis.delta must lie in (0, 1]",
        )?;
        c(
            self.analysis.a_hat.is_none_or(|a| a > 0.0),
            "analysis.a_hat must be > 0",
        )?;
        c(
            self.analysis.xi_lo <= self.analysis.xi_hi,
            "analysis.xi_lo must not exceed analysis.xi_hi",
        )?;
        c(self.sweep.seeds >= 1, "sweep.seeds must be >= 1")?;
        c(
            self.sweep.widths.iter().all(|&w| w >= 1),
            "sweep.widths entries must be >= 1",
        )?;
        c(
            self.sweep.m1_list.iter().all(|&w| w >= 1),
            "sweep.m1_list entries must be >= 1",
        )?;
        c(
            self.sweep
                .noise_sigmas
                .iter()
                .all(|&s| s >= 0.0 && s.is_finite()),
            "sweep.noise_sigmas entries must be >= 0",
        )?;
        c(
            self.sweep.loss_threshold > 0.0,
            "sweep.loss_threshold must be > 0",
        )?;
        c(self.sweep.t_eval >= 0.0, "sweep.t_eval must be >= 0")?;
        Ok(())
    }

    pub fn a_hat(&self) -> f64 {
        self.analysis.a_hat.unwrap_or(self.model.a_scale)
    }

    /// Regime implied by the config: explicit `mf.regime`, else from `alpha`.
    pub fn regime(&self) -> Option<Regime> {
        self.mf
            .regime
            .or_else(|| Regime::for_alpha(self.model.alpha))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let pairs = if text.trim_start().starts_with('{') {
            flatten_json(text)?
        } else {
            parse_key_values(text)?
        };
        let mut cfg = RunConfig::default();
        for (key, value, _) in &pairs {
            cfg.set(key, value)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// The fully resolved config, defaults included.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Key, value and source line of each assignment.
type Pairs = Vec<(String, String, usize)>;

fn push_unique(pairs: &mut Pairs, key: String, value: String, line: usize) -> Result<()> {
    if let Some((_, _, first)) = pairs.iter().find(|(k, _, _)| *k == key) {
        return Err(Error::Parse {
            line,
            msg: format!("key {key:?} repeated (first set on line {first})"),
        });
    }
    pairs.push((key, value, line));
    Ok(())
}

fn parse_key_values(text: &str) -> Result<Pairs> {
    let mut pairs = Pairs::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                msg: "unterminated section header".into(),
            })?;
            let name = name.trim();
            if !valid_key(name) {
                return Err(Error::Parse {
                    line,
                    msg: format!("bad section name {name:?}"),
                });
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, found {content:?}"),
        })?;
        let k = k.trim();
        if !valid_key(k) {
            return Err(Error::Parse {
                line,
                msg: format!("bad key {k:?}"),
            });
        }
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        push_unique(&mut pairs, key, v.to_string(), line)?;
    }
    Ok(pairs)
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|part| {
            !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        })
}

fn flatten_json(text: &str) -> Result<Pairs> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let serde_json::Value::Object(map) = value else {
        return Err(Error::Parse {
            line: 1,
            msg: "top-level JSON value must be an object".into(),
        });
    };
    let mut flat = BTreeMap::new();
    flatten_into(&mut flat, String::new(), &serde_json::Value::Object(map), 0)?;
    let mut pairs = Pairs::new();
    for (k, v) in flat {
        push_unique(&mut pairs, k, v, 0)?;
    }
    Ok(pairs)
}

fn flatten_into(
    out: &mut BTreeMap<String, String>,
    prefix: String,
    v: &serde_json::Value,
    depth: usize,
) -> Result<()> {
    use serde_json::Value;
    if depth > 8 {
        return Err(Error::Parse {
            line: 0,
            msg: "JSON nested too deeply".into(),
        });
    }
    let scalar = |v: &Value| -> Result<String> {
        Ok(match v {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Number(n) => n.to_string(),
            Value::String(s) => s.clone(),
            _ => {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("unexpected value under {prefix:?}"),
                })
            }
        })
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(out, key, child, depth + 1)?;
            }
        }
        Value::Array(items) => {
            let parts: Result<Vec<String>> = items.iter().map(&scalar).collect();
            insert_flat(out, prefix, parts?.join(","))?;
        }
        other => {
            let s = scalar(other)?;
            insert_flat(out, prefix, s)?;
        }
    }
    Ok(())
}

fn insert_flat(out: &mut BTreeMap<String, String>, key: String, value: String) -> Result<()> {
    if out.insert(key.clone(), value).is_some() {
        return Err(Error::Parse {
            line: 0,
            msg: format!("key {key:?} given twice"),
        });
    }
    Ok(())
}
