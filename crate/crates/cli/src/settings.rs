//! `key=value` config files merged with command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use logicnet::gnn::{Aggregator, GnnConfig};
use logicnet::logic::GroundingStrategy;
use logicnet::trainer::TrainConfig;

use crate::CliError;

pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    "closed-world",
    "gnn-dim",
    "tune-dim",
    "steps",
    "aggregator",
    "hidden",
    "pred-dim",
    "head-hidden",
    "lr",
    "lr-patience",
    "batch",
    "lambda",
    "epochs",
    "steps-per-epoch",
    "epochs-e",
    "epochs-m",
    "budget",
    "mstep-steps",
    "strategy",
    "exhaustive-cap",
];

/// Raw settings keyed by their flag names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse_config(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut out = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = || format!("{}:{}", origin.display(), i + 1);
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Data(format!("{}: expected key=value", at())));
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::Data(format!("{}: unknown key {key:?}", at())));
            }
            out.values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(out)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                Settings::parse_config(&text, p)
            }
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Sets `key` only when it is still unset.
    pub fn default_to(&mut self, key: &str, value: impl ToString) {
        if !self.values.contains_key(key) {
            self.set(key, value);
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("invalid value {v:?} for {key}"))),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        Ok(self.get("seed")?.unwrap_or(0))
    }

    pub fn threads(&self) -> Result<Option<usize>, CliError> {
        self.get("threads")
    }

    pub fn closed_world(&self) -> Result<bool, CliError> {
        Ok(self.get("closed-world")?.unwrap_or(false))
    }

    pub fn gnn_config(&self) -> Result<GnnConfig, CliError> {
        let mut cfg = GnnConfig::default();
        if let Some(v) = self.get("gnn-dim")? {
            cfg.gnn_dim = v;
        }
        if let Some(v) = self.get("tune-dim")? {
            cfg.tune_dim = v;
        }
        if let Some(v) = self.get("steps")? {
            cfg.steps = v;
        } else if cfg.gnn_dim == 0 {
            cfg.steps = 0;
        }
        if let Some(v) = self.get::<String>("aggregator")? {
            cfg.aggregator = v
                .parse::<Aggregator>()
                .map_err(|_| CliError::Usage(format!("invalid aggregator {v:?}")))?;
        }
        if let Some(v) = self.get("hidden")? {
            cfg.hidden = v;
        }
        if let Some(v) = self.get("pred-dim")? {
            cfg.pred_dim = v;
        }
        if let Some(v) = self.get("head-hidden")? {
            cfg.head_hidden = v;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = TrainConfig {
            seed: self.seed()?,
            ..TrainConfig::default()
        };
        macro_rules! take {
            ($key:literal, $field:ident) => {
                if let Some(v) = self.get($key)? {
                    cfg.$field = v;
                }
            };
        }
        take!("lr", lr);
        take!("lr-patience", lr_patience);
        take!("batch", batch_formulae);
        take!("lambda", lambda);
        take!("epochs", epochs);
        take!("steps-per-epoch", steps_per_epoch);
        take!("epochs-e", epochs_e);
        take!("epochs-m", epochs_m);
        take!("budget", mstep_budget);
        take!("mstep-steps", mstep_steps);
        take!("exhaustive-cap", exhaustive_cap);
        if let Some(v) = self.get::<String>("strategy")? {
            cfg.strategy = match v.as_str() {
                "uniform" => GroundingStrategy::Uniform,
                "anchored" => GroundingStrategy::Anchored,
                _ => return Err(CliError::Usage(format!("invalid strategy {v:?}"))),
            };
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_and_overrides() {
        let text = "# comment\nlr = 0.01\ngnn-dim=8 # trailing\n\nepochs=3\n";
        let mut s = Settings::parse_config(text, Path::new("cfg")).unwrap();
        s.set("epochs", 5);
        let t = s.train_config().unwrap();
        assert_eq!((t.lr, t.epochs), (0.01, 5));
        assert_eq!(s.gnn_config().unwrap().gnn_dim, 8);
    }

    #[test]
    fn bad_lines_name_their_position() {
        let err = Settings::parse_config("lr=1\nnonsense\n", Path::new("c.cfg")).unwrap_err();
        assert!(err.to_string().contains("c.cfg:2"), "{err}");
        let err = Settings::parse_config("colour=red", Path::new("c.cfg")).unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn pure_tunable_config_drops_message_passing() {
        let mut s = Settings::default();
        s.set("gnn-dim", 0);
        assert_eq!(s.gnn_config().unwrap().steps, 0);
    }
}
