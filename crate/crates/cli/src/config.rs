//! Flat `key=value` experiment configuration.
//!
//! Keys carry a dotted section prefix (`market.s0`). A file may set any
//! subset; command-line overrides are applied on top, and every key not set
//! takes the default listed in [`KEYS`]. The effective configuration is the
//! full sorted key list, which is also what the config hash covers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Known keys with their defaults and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("market.s0", "100", "initial stock price"),
    ("market.mu", "0.03", "drift of the simulated stock"),
    ("market.sigma", "0.15", "volatility"),
    ("market.r", "0.03", "risk-free rate"),
    ("market.maturity", "1", "option maturity in years"),
    ("market.n_steps", "24", "number of hedge rebalancing dates"),
    ("contract.type", "put", "put or call"),
    ("contract.strike", "100", "strike price"),
    ("risk.lambda", "0.001", "risk aversion of the quadratic hedger"),
    ("mc.n_paths", "10000", "number of simulated paths"),
    ("mc.seed", "42", "simulation seed"),
    ("input.prices", "", "price panel CSV (path,t,s) used instead of simulation"),
    ("basis.kind", "bspline", "bspline, one_hot or rbf"),
    ("basis.m", "12", "number of basis functions"),
    ("basis.degree", "3", "spline degree"),
    ("basis.bandwidth", "", "rbf bandwidth; empty for the mean centre spacing"),
    ("solver.kind", "dp", "solver used by `run`: dp, fqi, tabular, utility or bs"),
    ("solver.centering", "conditional", "conditional or cross_sectional"),
    ("solver.drift", "model", "model or sample expected increment"),
    ("rollout.strategy", "dp_optimal", "dp_optimal, local_risk, zero, constant or random(lo,hi)"),
    ("rollout.constant", "0", "hedge of the constant strategy"),
    ("dataset.policy", "dp_optimal", "dp_optimal, local_risk, zero or random(lo,hi)"),
    ("dataset.seed", "7", "seed of the random behaviour policy"),
    ("fqi.dataset", "", "transition CSV to learn from; empty to generate one"),
    ("fqi.rewards", "relabel", "relabel or stored"),
    ("fqi.actions", "analytic", "analytic or crossfit"),
    ("tabular.chain", "lattice", "lattice or simulated"),
    ("tabular.n_x", "21", "number of states"),
    ("tabular.n_steps", "5", "lattice horizon in steps of market.maturity/market.n_steps"),
    ("tabular.lambda", "0.1", "risk aversion of the tabular instance"),
    ("tabular.n_a", "5", "number of grid actions"),
    ("tabular.a_min", "-1", "lowest grid action"),
    ("tabular.a_max", "0", "highest grid action"),
    ("tabular.updates", "100000", "Q-learning updates per time slice"),
    ("tabular.alpha0", "1", "initial step size"),
    ("tabular.k0", "1", "step-size decay scale"),
    ("tabular.seed", "3", "Q-learning seed"),
    ("utility.gamma", "0.01", "exponential-utility risk aversion"),
    ("utility.order", "1", "expansion order 0, 1 or 2"),
    ("utility.method", "expansion", "expansion or numeric"),
    ("report.surface_points", "41", "states per step in surface reports"),
    ("compare.n_paths", "2000,10000,50000", "path counts of the convergence table"),
];

/// Command-line spellings that map onto config keys.
const ALIASES: &[(&str, &str)] = &[
    ("solver", "solver.kind"),
    ("seed", "mc.seed"),
    ("lambda", "risk.lambda"),
    ("utility-gamma", "utility.gamma"),
    ("utility-order", "utility.order"),
    ("utility-method", "utility.method"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl Default for Config {
    fn default() -> Self {
        Config { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, k)| k);
        if !known(key) {
            return Err(CliError::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Apply `key=value` lines; `#` starts a comment line.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key=value, found `{line}`", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Apply `--key value` and `--key=value` overrides.
    pub fn merge_args(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut i = 0;
        while i < args.len() {
            let flag = args[i]
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("expected `--key value`, found `{}`", args[i])))?;
            if let Some((k, v)) = flag.split_once('=') {
                self.set(k, v)?;
                i += 1;
            } else {
                let v = args.get(i + 1).ok_or_else(|| CliError::Config(format!("flag `--{flag}` needs a value")))?;
                self.set(flag, v)?;
                i += 2;
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        debug_assert!(known(key), "{key}");
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| CliError::Config(format!("`{key}={v}`: {e}")))
    }

    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Effective configuration, one sorted `key=value` per line.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
