//! Flat key-value JSON configuration. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use dir_core::model::{GammaPrior, GroupPrior, GrowthPrior, Mode, ModelConstants, SamplerConfig};
use dir_core::simgen::{LapseRule, SimConfig};
use dir_core::{Error, Result};
use serde_json::{Map, Number, Value};

pub type Entries = BTreeMap<String, Value>;

pub fn load(path: &Path) -> Result<Entries> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: not valid JSON: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(Error::Config(format!("{}: expected a JSON object of key-value pairs", path.display())));
    };
    for (key, v) in &map {
        if v.is_object() {
            return Err(Error::Config(format!("{}: key '{key}' holds an object; use flat dotted keys", path.display())));
        }
    }
    Ok(map.into_iter().collect())
}

pub fn to_json(entries: &Entries) -> String {
    let map: Map<String, Value> = entries.clone().into_iter().collect();
    serde_json::to_string_pretty(&Value::Object(map)).expect("plain values serialize") + "\n"
}

fn float(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Config(format!("'{key}' must be a number")))
}

fn count(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| Error::Config(format!("'{key}' must be a nonnegative integer")))
}

fn seed(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| Error::Config(format!("'{key}' must be an unsigned 64-bit integer")))
}

fn text<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Config(format!("'{key}' must be a string")))
}

/// A number, or an array of numbers.
fn floats(key: &str, v: &Value, len: usize) -> Result<Vec<f64>> {
    match v {
        Value::Array(items) => items.iter().map(|x| float(key, x)).collect(),
        other => Ok(vec![float(key, other)?; len]),
    }
}

fn num(x: f64) -> Value {
    Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "retrospective" => Ok(Mode::Retrospective),
        "online" => Ok(Mode::Online),
        other => Err(Error::Config(format!("mode must be 'retrospective' or 'online', got '{other}'"))),
    }
}

/// Everything needed to fit a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub constants: ModelConstants,
    pub sampler: SamplerConfig,
    pub chains: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { constants: ModelConstants::default(), sampler: SamplerConfig::default(), chains: 1 }
    }
}

fn gamma_field(prior: &mut GammaPrior, field: &str, key: &str, v: &Value) -> Result<()> {
    match field {
        "shape" => prior.shape = float(key, v)?,
        "rate" => prior.rate = float(key, v)?,
        _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
    }
    Ok(())
}

impl FitSettings {
    pub fn apply(&mut self, entries: &Entries) -> Result<()> {
        for (key, v) in entries {
            let parts: Vec<&str> = key.split('.').collect();
            let c = &mut self.constants;
            match parts.as_slice() {
                ["seed"] => self.sampler.seed = seed(key, v)?,
                ["iterations"] => self.sampler.n_iterations = count(key, v)?,
                ["burn_in"] => self.sampler.burn_in = count(key, v)?,
                ["thin"] => self.sampler.thin = count(key, v)?,
                ["chains"] => self.chains = count(key, v)?,
                ["mode"] => self.sampler.mode = parse_mode(text(key, v)?)?,
                ["drift_sd"] => self.sampler.fixed_drift_sd = if v.is_null() { None } else { Some(float(key, v)?) },
                ["sigma"] => c.sigma = float(key, v)?,
                ["rho"] => c.rho = float(key, v)?,
                ["delta_tmax"] => c.delta_tmax = float(key, v)?,
                ["initial_mean"] => c.default_group_prior.mean = float(key, v)?,
                ["initial_var"] => c.default_group_prior.var = float(key, v)?,
                ["group_prior", label, field] => {
                    let prior = c.group_priors.entry(label.to_string()).or_insert(c.default_group_prior);
                    match *field {
                        "mean" => prior.mean = float(key, v)?,
                        "var" => prior.var = float(key, v)?,
                        _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
                    }
                }
                ["prior", "growth"] => match text(key, v)? {
                    "flat" => c.priors.growth = GrowthPrior::Flat,
                    other => return Err(Error::Config(format!("'{key}' must be \"flat\" or given by mean/var, got '{other}'"))),
                },
                ["prior", "growth", field] => {
                    let (mut mean, mut var) = match c.priors.growth {
                        GrowthPrior::TruncatedNormal { mean, var } => (mean, var),
                        GrowthPrior::Flat => (0.0, 1.0),
                    };
                    match *field {
                        "mean" => mean = float(key, v)?,
                        "var" => var = float(key, v)?,
                        _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
                    }
                    c.priors.growth = GrowthPrior::TruncatedNormal { mean, var };
                }
                ["prior", "drift_precision", field] => gamma_field(&mut c.priors.drift_precision, field, key, v)?,
                ["prior", "day_effect_precision", field] => gamma_field(&mut c.priors.day_effect_precision, field, key, v)?,
                ["prior", "test_effect_precision", field] => gamma_field(&mut c.priors.test_effect_precision, field, key, v)?,
                _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.sampler.validate()?;
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if self.sampler.mode == Mode::Online && self.chains != 1 {
            return Err(Error::Config("online mode runs a single chain".into()));
        }
        Ok(())
    }

    /// The resolved settings as a config file that reproduces them.
    pub fn entries(&self) -> Entries {
        let c = &self.constants;
        let s = &self.sampler;
        let mut out = Entries::new();
        out.insert("seed".into(), Value::from(s.seed));
        out.insert("iterations".into(), Value::from(s.n_iterations));
        out.insert("burn_in".into(), Value::from(s.burn_in));
        out.insert("thin".into(), Value::from(s.thin));
        out.insert("chains".into(), Value::from(self.chains));
        out.insert("mode".into(), Value::from(s.mode.to_string()));
        out.insert("drift_sd".into(), s.fixed_drift_sd.map(num).unwrap_or(Value::Null));
        out.insert("sigma".into(), num(c.sigma));
        out.insert("rho".into(), num(c.rho));
        out.insert("delta_tmax".into(), num(c.delta_tmax));
        out.insert("initial_mean".into(), num(c.default_group_prior.mean));
        out.insert("initial_var".into(), num(c.default_group_prior.var));
        for (label, GroupPrior { mean, var }) in &c.group_priors {
            out.insert(format!("group_prior.{label}.mean"), num(*mean));
            out.insert(format!("group_prior.{label}.var"), num(*var));
        }
        match c.priors.growth {
            GrowthPrior::Flat => {
                out.insert("prior.growth".into(), Value::from("flat"));
            }
            GrowthPrior::TruncatedNormal { mean, var } => {
                out.insert("prior.growth.mean".into(), num(mean));
                out.insert("prior.growth.var".into(), num(var));
            }
        }
        for (name, p) in [
            ("drift_precision", c.priors.drift_precision),
            ("day_effect_precision", c.priors.day_effect_precision),
            ("test_effect_precision", c.priors.test_effect_precision),
        ] {
            out.insert(format!("prior.{name}.shape"), num(p.shape));
            out.insert(format!("prior.{name}.rate"), num(p.rate));
        }
        out
    }
}

const SIZE_KEYS: [&str; 4] = ["n_individuals", "days", "tests_per_day", "items_per_test"];

/// Simulation settings: the reference design, resized and overridden by `entries`.
pub fn sim_config(entries: &Entries, seed_override: Option<u64>) -> Result<SimConfig> {
    let base = SimConfig::reference_design(0);
    let size = |key: &str, default: usize| entries.get(key).map(|v| count(key, v)).unwrap_or(Ok(default));
    let n = size("n_individuals", base.n_individuals)?;
    let mut cfg = SimConfig::scaled(
        n,
        size("days", base.days)?,
        size("tests_per_day", base.tests_per_day)?,
        size("items_per_test", base.items_per_test)?,
        0,
    );
    for (key, v) in entries {
        match key.as_str() {
            k if SIZE_KEYS.contains(&k) => {}
            "seed" => cfg.seed = seed(key, v)?,
            "lapse" => {
                cfg.lapse = match v {
                    Value::String(s) if s == "reference" => LapseRule::ReferenceSchedule,
                    Value::Array(_) => LapseRule::Table(floats(key, v, 0)?),
                    other => LapseRule::Constant(float(key, other)?),
                }
            }
            "growth" => cfg.growth = floats(key, v, n)?,
            "day_effect_precision" => cfg.day_effect_precision = floats(key, v, n)?,
            "test_effect_precision" => cfg.test_effect_precision = floats(key, v, n)?,
            "drift_sd" => cfg.drift_precision = float(key, v)?.powi(-2),
            "drift_precision" => cfg.drift_precision = float(key, v)?,
            "sigma" => cfg.sigma = float(key, v)?,
            "rho" => cfg.rho = float(key, v)?,
            "delta_tmax" => cfg.delta_tmax = float(key, v)?,
            "difficulty_half_width" => cfg.difficulty_half_width = float(key, v)?,
            "initial_mean" => cfg.initial.mean = float(key, v)?,
            "initial_var" => cfg.initial.var = float(key, v)?,
            "group" => cfg.group = text(key, v)?.to_string(),
            "require_valid" => {
                cfg.require_valid = v.as_bool().ok_or_else(|| Error::Config(format!("'{key}' must be true or false")))?
            }
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
    }
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn sim_entries(cfg: &SimConfig) -> Entries {
    let mut out = Entries::new();
    out.insert("seed".into(), Value::from(cfg.seed));
    out.insert("n_individuals".into(), Value::from(cfg.n_individuals));
    out.insert("days".into(), Value::from(cfg.days));
    out.insert("tests_per_day".into(), Value::from(cfg.tests_per_day));
    out.insert("items_per_test".into(), Value::from(cfg.items_per_test));
    out.insert(
        "lapse".into(),
        match &cfg.lapse {
            LapseRule::ReferenceSchedule => Value::from("reference"),
            LapseRule::Constant(l) => num(*l),
            LapseRule::Table(t) => nums(t),
        },
    );
    out.insert("growth".into(), nums(&cfg.growth));
    out.insert("day_effect_precision".into(), nums(&cfg.day_effect_precision));
    out.insert("test_effect_precision".into(), nums(&cfg.test_effect_precision));
    out.insert("drift_precision".into(), num(cfg.drift_precision));
    out.insert("sigma".into(), num(cfg.sigma));
    out.insert("rho".into(), num(cfg.rho));
    out.insert("delta_tmax".into(), num(cfg.delta_tmax));
    out.insert("difficulty_half_width".into(), num(cfg.difficulty_half_width));
    out.insert("initial_mean".into(), num(cfg.initial.mean));
    out.insert("initial_var".into(), num(cfg.initial.var));
    out.insert("group".into(), Value::from(cfg.group.clone()));
    out.insert("require_valid".into(), Value::from(cfg.require_valid));
    out
}
