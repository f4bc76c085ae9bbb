//! Recorded transitions `(X_t, a_t, R_t, X_{t+1})` and their CSV form.
//!
//! The file starts with `#key=value` header lines describing the market,
//! the contract and the generating run, followed by the column line
//! `path,t,x,a,r,x_next` and one record per path and step. Floats are
//! written with 17 significant digits so a write/read cycle is lossless.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{QlbsError, Result};
use crate::market::{MarketParams, OptionContract, PathEnsemble};
use crate::portfolio::PortfolioRollout;

pub const COLUMNS: &str = "path,t,x,a,r,x_next";

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub n_paths: usize,
    pub n_steps: usize,
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub dt: f64,
    pub lambda: f64,
    pub seed: Option<u64>,
    pub contract: OptionContract,
    /// Name of the behaviour policy that produced the actions.
    pub policy: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRecord {
    pub path: usize,
    pub t: usize,
    pub x: f64,
    pub a: f64,
    pub r: f64,
    pub x_next: f64,
}

/// Records of one step, in path order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRecords {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub x_next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub header: DatasetHeader,
    records: Vec<TransitionRecord>,
}

impl TransitionDataset {
    /// Build from records; they are sorted by `(path, t)` and checked for
    /// exactly one record per path and step.
    pub fn new(header: DatasetHeader, mut records: Vec<TransitionRecord>) -> Result<Self> {
        records.sort_by_key(|r| (r.path, r.t));
        let ds = TransitionDataset { header, records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.n_steps == 0 || h.n_paths == 0 {
            return Err(QlbsError::invalid("dataset", "header declares no paths or no steps"));
        }
        if self.records.len() != h.n_paths * h.n_steps {
            return Err(QlbsError::shape(
                "fqi_solver",
                format!("{} records for {} paths x {} steps", self.records.len(), h.n_paths, h.n_steps),
            ));
        }
        for (i, rec) in self.records.iter().enumerate() {
            let (p, t) = (i / h.n_steps, i % h.n_steps);
            if rec.path != p || rec.t != t {
                return Err(QlbsError::shape(
                    "fqi_solver",
                    format!("expected one record per path and step; found (path {}, t {}) where (path {p}, t {t}) belongs", rec.path, rec.t),
                ));
            }
            if ![rec.x, rec.a, rec.r, rec.x_next].iter().all(|v| v.is_finite()) {
                return Err(QlbsError::NonFinite { module: "fqi_solver", t: Some(t), condition: format!("record of path {p}") });
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn n_paths(&self) -> usize {
        self.header.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.header.n_steps
    }

    /// Record arrays for step `t`, ordered by path.
    pub fn step(&self, t: usize) -> StepRecords {
        let n_t = self.header.n_steps;
        let mut out = StepRecords::default();
        for rec in self.records.iter().skip(t).step_by(n_t) {
            out.x.push(rec.x);
            out.a.push(rec.a);
            out.r.push(rec.r);
            out.x_next.push(rec.x_next);
        }
        out
    }

    /// Market parameters implied by the header; `s0` is read off the first
    /// recorded state.
    pub fn market_params(&self) -> Result<MarketParams> {
        let h = &self.header;
        let x0 = self.records[0].x;
        MarketParams::new(x0.exp(), h.mu, h.sigma, h.r, h.dt * h.n_steps as f64, h.n_steps)
    }

    /// Rebuild the price paths from the recorded states.
    pub fn to_ensemble(&self) -> Result<PathEnsemble> {
        let params = self.market_params()?;
        let n_t = self.header.n_steps;
        let prices: Vec<Vec<f64>> = self
            .records
            .chunks(n_t)
            .map(|recs| {
                let mut row: Vec<f64> = recs
                    .iter()
                    .map(|r| crate::market::from_state(r.x, params.time(r.t), &params))
                    .collect();
                row.push(crate::market::from_state(recs[n_t - 1].x_next, params.time(n_t), &params));
                row
            })
            .collect();
        for recs in self.records.chunks(n_t) {
            for w in recs.windows(2) {
                if (w[0].x_next - w[1].x).abs() > 1e-9 * (1.0 + w[1].x.abs()) {
                    return Err(QlbsError::degenerate(
                        "fqi_solver",
                        Some(w[1].t),
                        format!("path {}: next state does not match the following record", w[0].path),
                    ));
                }
            }
        }
        PathEnsemble::from_prices(params, &prices)
    }

    /// Record every step of a portfolio rollout.
    pub fn from_rollout(
        paths: &PathEnsemble,
        rollout: &PortfolioRollout,
        contract: &OptionContract,
        lambda: f64,
        policy: &str,
    ) -> Result<Self> {
        let p = paths.params();
        let header = DatasetHeader {
            n_paths: paths.n_paths(),
            n_steps: paths.n_steps(),
            mu: p.mu,
            sigma: p.sigma,
            r: p.r,
            dt: p.dt(),
            lambda,
            seed: paths.seed(),
            contract: *contract,
            policy: policy.to_string(),
        };
        let mut records = Vec::with_capacity(paths.n_paths() * paths.n_steps());
        for k in 0..paths.n_paths() {
            for t in 0..paths.n_steps() {
                records.push(TransitionRecord {
                    path: k,
                    t,
                    x: paths.x(t)[k],
                    a: rollout.actions[t][k],
                    r: rollout.rewards[t][k],
                    x_next: paths.x(t + 1)[k],
                });
            }
        }
        TransitionDataset::new(header, records)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let h = &self.header;
        writeln!(w, "#n_paths={}", h.n_paths)?;
        writeln!(w, "#n_steps={}", h.n_steps)?;
        writeln!(w, "#mu={}", fmt_f64(h.mu))?;
        writeln!(w, "#sigma={}", fmt_f64(h.sigma))?;
        writeln!(w, "#r={}", fmt_f64(h.r))?;
        writeln!(w, "#dt={}", fmt_f64(h.dt))?;
        writeln!(w, "#lambda={}", fmt_f64(h.lambda))?;
        match h.seed {
            Some(s) => writeln!(w, "#seed={s}")?,
            None => writeln!(w, "#seed=none")?,
        }
        writeln!(w, "#option={}", h.contract.kind)?;
        writeln!(w, "#strike={}", fmt_f64(h.contract.strike))?;
        writeln!(w, "#policy={}", h.policy)?;
        writeln!(w, "{COLUMNS}")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{},{}", r.path, r.t, fmt_f64(r.x), fmt_f64(r.a), fmt_f64(r.r), fmt_f64(r.x_next))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut records = Vec::new();
        let mut seen_columns = false;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(kv) = line.strip_prefix('#') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| QlbsError::Parse { line: ln, detail: format!("header line `{line}` lacks `=`") })?;
                meta.insert(k.trim().to_string(), (v.trim().to_string(), ln));
                continue;
            }
            if !seen_columns {
                if line != COLUMNS {
                    return Err(QlbsError::Parse { line: ln, detail: format!("expected column line `{COLUMNS}`") });
                }
                seen_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(QlbsError::Parse { line: ln, detail: format!("expected 6 fields, found {}", f.len()) });
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| QlbsError::Parse { line: ln, detail: format!("`{s}`: {e}") });
            let num = |s: &str| s.parse::<f64>().map_err(|e| QlbsError::Parse { line: ln, detail: format!("`{s}`: {e}") });
            records.push(TransitionRecord {
                path: int(f[0])?,
                t: int(f[1])?,
                x: num(f[2])?,
                a: num(f[3])?,
                r: num(f[4])?,
                x_next: num(f[5])?,
            });
        }
        let get = |k: &str| -> Result<(String, usize)> {
            meta.get(k)
                .cloned()
                .ok_or_else(|| QlbsError::Parse { line: 0, detail: format!("missing header key `{k}`") })
        };
        let num = |k: &str| -> Result<f64> {
            let (v, ln) = get(k)?;
            v.parse().map_err(|e| QlbsError::Parse { line: ln, detail: format!("{k}: {e}") })
        };
        let int = |k: &str| -> Result<usize> {
            let (v, ln) = get(k)?;
            v.parse().map_err(|e| QlbsError::Parse { line: ln, detail: format!("{k}: {e}") })
        };
        let seed = match get("seed")?.0.as_str() {
            "none" => None,
            s => Some(s.parse().map_err(|e| QlbsError::Parse { line: 0, detail: format!("seed: {e}") })?),
        };
        let header = DatasetHeader {
            n_paths: int("n_paths")?,
            n_steps: int("n_steps")?,
            mu: num("mu")?,
            sigma: num("sigma")?,
            r: num("r")?,
            dt: num("dt")?,
            lambda: num("lambda")?,
            seed,
            contract: OptionContract { kind: get("option")?.0.parse()?, strike: num("strike")? },
            policy: meta.get("policy").map(|v| v.0.clone()).unwrap_or_default(),
        };
        TransitionDataset::new(header, records)
    }
}
