//! Flat `key = value` run configuration.
//!
//! Resolution order is command-line flag, then config file, then the profile
//! defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sqsglu::data::DatasetName;
use sqsglu::gates::{GateKind, GateSpec};
use sqsglu::train::TrainConfig;
use sqsglu::{Error, ModelConfig, Result};

use crate::TrainArgs;

pub const KEYS: [&str; 16] = [
    "dataset",
    "gate",
    "lambda",
    "c",
    "p",
    "epochs",
    "batch",
    "lr",
    "wd",
    "noise-std",
    "seed",
    "seeds",
    "profile",
    "data-dir",
    "deterministic",
    "max-steps",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Interp,
    Perf,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interp" => Ok(Profile::Interp),
            "perf" => Ok(Profile::Perf),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected interp or perf)"))),
        }
    }
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("config line {}: unknown key `{key}`", i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Everything a `train` or `repro` invocation needs, fully resolved.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub dataset: DatasetName,
    pub gate: GateSpec,
    pub profile: Profile,
    pub seeds: Vec<u64>,
    pub data_dir: PathBuf,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

struct Layered<'a> {
    file: &'a BTreeMap<String, String>,
}

impl Layered<'_> {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{s}`"))),
        }
    }
}

pub fn resolve(args: &TrainArgs, default_profile: Profile) -> Result<Resolved> {
    let file = match &args.config {
        Some(p) => parse_config_text(&read_config(p)?)?,
        None => BTreeMap::new(),
    };
    let l = Layered { file: &file };

    let dataset: DatasetName = match l.get(args.dataset.clone(), "dataset")? {
        Some(s) => s.parse::<DatasetName>().map_err(|e| Error::Config(e.to_string()))?,
        None => DatasetName::Mnist,
    };
    let profile = match l.get(args.profile.clone(), "profile")? {
        Some(s) => s.parse()?,
        None => default_profile,
    };
    let kind: GateKind = match l.get(args.gate.clone(), "gate")? {
        Some(s) => s.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
        None => GateKind::Sqs,
    };
    let mut gate = GateSpec::of(kind);
    if kind == GateKind::Sqs {
        let d = GateSpec::sqs_default();
        gate = GateSpec::sqs(
            l.get(args.c, "c")?.unwrap_or(d.shift_c),
            l.get(args.lambda, "lambda")?.unwrap_or(d.shrink_lambda),
            l.get(args.p, "p")?.unwrap_or(d.power_p),
        );
    } else if args.c.is_some() || args.lambda.is_some() || args.p.is_some() {
        return Err(Error::Config(format!("--c/--lambda/--p only apply to the sqs gate, not {}", kind.name())));
    }
    gate.validate().map_err(|e| Error::Config(e.to_string()))?;

    let seed = l.get(args.seed, "seed")?.unwrap_or(1);
    let n_seeds = l.get(args.seeds, "seeds")?.unwrap_or(1);
    if n_seeds == 0 {
        return Err(Error::Config("--seeds must be ≥ 1".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed + i).collect();

    let mut train = match profile {
        Profile::Interp => TrainConfig::interp(seed),
        Profile::Perf => TrainConfig::perf(seed),
    };
    if let Some(v) = l.get(args.epochs, "epochs")? {
        train.epochs = v;
    }
    if let Some(v) = l.get(args.batch, "batch")? {
        train.batch_size = v;
    }
    if let Some(v) = l.get(args.lr, "lr")? {
        train.lr = v;
    }
    if let Some(v) = l.get(args.wd, "wd")? {
        train.weight_decay = v;
    }
    if let Some(v) = l.get(args.noise_std, "noise-std")? {
        train.noise_std = v;
    }
    if let Some(v) = l.get(args.max_steps, "max-steps")? {
        train.max_steps = Some(v);
    }
    if args.deterministic || l.get(None, "deterministic")?.unwrap_or(false) {
        train.deterministic = true;
    }
    train.validate()?;

    let model = match profile {
        Profile::Interp => ModelConfig::interp(gate, seed),
        Profile::Perf => ModelConfig::perf(gate, seed),
    };
    model.validate()?;

    let data_dir = match l.get(args.data_dir.clone(), "data-dir")? {
        Some(p) => p,
        None => std::env::var_os("SQS_DATA_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data")),
    };

    Ok(Resolved {
        dataset,
        gate,
        profile,
        seeds,
        data_dir,
        train,
        model,
    })
}

fn read_config(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))
}

impl Resolved {
    pub fn for_seed(&self, seed: u64) -> (ModelConfig, TrainConfig) {
        let mut m = self.model.clone();
        m.seed = seed;
        let mut t = self.train.clone();
        t.seed = seed;
        (m, t)
    }
}
