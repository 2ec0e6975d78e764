//! Parameter sweeps: explore, solve and evaluate every (model, α, γ)
//! point and collect one result row per point.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::attack::{AttackModel, ModelParams};
use crate::baseline::TraditionalModel;
use crate::error::{Error, Result};
use crate::explorer::{explore_cached, ExploreOptions};
use crate::mdp::{ExplicitMdp, MdpModel};
use crate::protocol;
use crate::solver::{solve, HonestAction, PtParams};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Generic,
    Traditional,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Generic => "generic",
            ModelKind::Traditional => "traditional",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "generic" => Ok(ModelKind::Generic),
            "traditional" => Ok(ModelKind::Traditional),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected generic or traditional)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub protocol: String,
    pub models: Vec<ModelKind>,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub limit: u32,
    pub pt: PtParams,
    pub cache_dir: Option<PathBuf>,
    /// Write one policy CSV per point into this directory.
    pub policy_dir: Option<PathBuf>,
    pub state_budget: usize,
}

impl Default for SweepConfig {
    /// The validation sweep: Bitcoin, both models, α from 0.05 to 0.5,
    /// γ ∈ {0, 0.5, 1}, limit 7, H = 30, ε = 0.01.
    fn default() -> Self {
        SweepConfig {
            protocol: "bitcoin".into(),
            models: vec![ModelKind::Generic, ModelKind::Traditional],
            alphas: (1..=10).map(|i| i as f64 * 0.05).map(round_grid).collect(),
            gammas: vec![0.0, 0.5, 1.0],
            limit: 7,
            pt: PtParams {
                horizon: 30.0,
                epsilon: 0.01,
            },
            cache_dir: None,
            policy_dir: None,
            state_budget: ExploreOptions::default().state_budget,
        }
    }
}

/// Rounds to 12 decimals so that grid values print as typed.
fn round_grid(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        protocol::by_name(&self.protocol)?;
        if self.models.is_empty() {
            return Err(Error::Config("model list is empty".into()));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("alpha list is empty".into()));
        }
        if self.gammas.is_empty() {
            return Err(Error::Config("gamma list is empty".into()));
        }
        if self.models.contains(&ModelKind::Traditional) && self.protocol != "bitcoin" {
            return Err(Error::Config(format!(
                "the traditional model only describes bitcoin, not `{}`",
                self.protocol
            )));
        }
        for &a in &self.alphas {
            for &g in &self.gammas {
                ModelParams::new(a, g, self.limit)?;
            }
        }
        PtParams::new(self.pt.horizon, self.pt.epsilon)?;
        Ok(())
    }

    /// Points in output order.
    pub fn points(&self) -> Vec<(ModelKind, f64, f64)> {
        let mut models = self.models.clone();
        models.sort();
        models.dedup();
        let mut alphas = self.alphas.clone();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let mut gammas = self.gammas.clone();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let mut out = Vec::new();
        for &m in &models {
            for &a in &alphas {
                for &g in &gammas {
                    out.push((m, a, g));
                }
            }
        }
        out
    }

    /// Applies `key = value` settings, see [`parse_config_file`].
    pub fn apply(&mut self, settings: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in settings {
            match k.as_str() {
                "protocol" => self.protocol = v.trim().to_string(),
                "model" => self.models = parse_list(v)?,
                "alpha" => self.alphas = parse_list(v)?,
                "gamma" => self.gammas = parse_list(v)?,
                "limit" => self.limit = parse_value(k, v)?,
                "horizon" => self.pt.horizon = parse_value(k, v)?,
                "epsilon" => self.pt.epsilon = parse_value(k, v)?,
                "cache_dir" => self.cache_dir = Some(PathBuf::from(v.trim())),
                "policy_dir" => self.policy_dir = Some(PathBuf::from(v.trim())),
                "state_budget" => self.state_budget = parse_value(k, v)?,
                // handled by the caller
                "out" | "threads" => {}
                other => return Err(Error::Config(format!("unknown config key `{other}`"))),
            }
        }
        Ok(())
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

/// Parses a comma-separated list. Empty entries are rejected.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid list entry `{x}` in `{s}`")))
        })
        .collect()
}

/// Parses a config file of `key = value` lines. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim().replace('-', "_");
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key `{k}`",
                n + 1
            )));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub protocol: String,
    pub model: ModelKind,
    pub alpha: f64,
    pub gamma: f64,
    pub limit: u32,
    pub horizon: f64,
    pub epsilon: f64,
    pub revenue: f64,
    pub honest_revenue: f64,
    pub states: usize,
    pub iterations: usize,
    pub wall_time_ms: u128,
}

pub const CSV_HEADER: [&str; 12] = [
    "protocol",
    "model",
    "alpha",
    "gamma",
    "limit",
    "H",
    "epsilon",
    "revenue",
    "honest_revenue",
    "states",
    "iterations",
    "wall_time_ms",
];

/// Writes rows as CSV. With `timing` off the wall time column is left
/// empty, which makes the output reproducible byte for byte.
pub fn write_csv<W: Write>(rows: &[SweepRow], w: W, timing: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.protocol.clone(),
            r.model.to_string(),
            r.alpha.to_string(),
            r.gamma.to_string(),
            r.limit.to_string(),
            r.horizon.to_string(),
            r.epsilon.to_string(),
            format!("{:.9}", r.revenue),
            format!("{:.9}", r.honest_revenue),
            r.states.to_string(),
            r.iterations.to_string(),
            if timing {
                r.wall_time_ms.to_string()
            } else {
                String::new()
            },
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs every point of the sweep, in parallel, returning rows in the
/// order of [`SweepConfig::points`].
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let protocol = protocol::by_name(&config.protocol)?;
    if let Some(dir) = &config.policy_dir {
        std::fs::create_dir_all(dir)?;
    }
    config
        .points()
        .into_par_iter()
        .map(|(model, alpha, gamma)| {
            let started = Instant::now();
            let options = ExploreOptions {
                state_budget: config.state_budget,
            };
            let cache = config.cache_dir.as_deref();
            let policy_path = config.policy_dir.as_ref().map(|d| {
                d.join(format!(
                    "policy-{}-{}-a{alpha}-g{gamma}.csv",
                    config.protocol,
                    model.name()
                ))
            });
            let (states, solution) = match model {
                ModelKind::Generic => {
                    let m = AttackModel::new(
                        protocol.as_ref(),
                        ModelParams::new(alpha, gamma, config.limit)?,
                    )?;
                    solve_point(&m, &options, cache, &config.pt, policy_path.as_deref())?
                }
                ModelKind::Traditional => {
                    let m = TraditionalModel::new(alpha, gamma, config.limit)?;
                    solve_point(&m, &options, cache, &config.pt, policy_path.as_deref())?
                }
            };
            Ok(SweepRow {
                protocol: config.protocol.clone(),
                model,
                alpha,
                gamma,
                limit: config.limit,
                horizon: config.pt.horizon,
                epsilon: config.pt.epsilon,
                revenue: solution.optimal.revenue,
                honest_revenue: solution.honest.revenue,
                states,
                iterations: solution.sweeps,
                wall_time_ms: started.elapsed().as_millis(),
            })
        })
        .collect()
}

fn solve_point<M>(
    model: &M,
    options: &ExploreOptions,
    cache: Option<&Path>,
    pt: &PtParams,
    policy_path: Option<&Path>,
) -> Result<(usize, crate::solver::Solution)>
where
    M: MdpModel,
    M::Action: HonestAction,
{
    let ex = explore_cached(model, options, cache)?;
    let solution = solve(&ex.mdp, pt)?;
    if let Some(path) = policy_path {
        write_policy(&ex.mdp, &solution.policy, path)?;
    }
    Ok((ex.mdp.num_states(), solution))
}

fn write_policy<A: crate::mdp::MdpAction>(
    mdp: &ExplicitMdp<A>,
    policy: &crate::solver::Policy,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    policy.write_csv(mdp, std::io::BufWriter::new(file))
}
