//! Breadth-first enumeration of a model's reachable state space.
//!
//! States are numbered layer by layer; within a layer newly discovered
//! keys are sorted, so the resulting MDP does not depend on the number of
//! worker threads.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::canonical::StateKey;
use crate::error::{Error, Result};
use crate::mdp::{ExplicitMdp, KeyedTransition, MdpModel, Transition};

#[derive(Clone, Debug)]
pub struct ExploreOptions {
    /// Exploration fails with [`Error::Budget`] beyond this many states.
    pub state_budget: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            state_budget: 5_000_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExplorationStats {
    pub states: usize,
    pub state_actions: usize,
    pub transitions: usize,
    pub max_state_size: usize,
    pub mean_state_size: f64,
    pub layers: usize,
}

impl ExplorationStats {
    pub fn of<M: MdpModel>(model: &M, mdp: &ExplicitMdp<M::Action>, layers: usize) -> Self {
        let sizes: Vec<usize> = mdp.states.iter().map(|k| model.state_size(k)).collect();
        ExplorationStats {
            states: mdp.num_states(),
            state_actions: mdp.num_state_actions(),
            transitions: mdp.num_transitions(),
            max_state_size: sizes.iter().copied().max().unwrap_or(0),
            mean_state_size: sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64,
            layers,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Exploration<A> {
    pub mdp: ExplicitMdp<A>,
    pub stats: ExplorationStats,
}

type Expanded<A> = (Vec<A>, Vec<Vec<KeyedTransition>>);

pub fn explore<M: MdpModel>(model: &M, options: &ExploreOptions) -> Result<Exploration<M::Action>> {
    let mut index: HashMap<StateKey, usize> = HashMap::new();
    let mut states: Vec<StateKey> = Vec::new();
    let mut expanded: Vec<Expanded<M::Action>> = Vec::new();

    let start = model.start()?;
    let mut frontier: Vec<StateKey> = start.iter().map(|(_, k)| k.clone()).collect();
    frontier.sort();
    frontier.dedup();
    let mut layers = 0;
    while !frontier.is_empty() {
        if states.len() + frontier.len() > options.state_budget {
            return Err(Error::Budget {
                budget: options.state_budget,
            });
        }
        for k in &frontier {
            index.insert(k.clone(), states.len());
            states.push(k.clone());
        }
        let layer: Vec<Expanded<M::Action>> = frontier
            .par_iter()
            .map(|k| {
                let actions = model.actions(k)?;
                let ts = actions
                    .iter()
                    .map(|&a| model.transitions(k, a))
                    .collect::<Result<Vec<_>>>()?;
                Ok((actions, ts))
            })
            .collect::<Result<_>>()?;
        let mut next: Vec<StateKey> = layer
            .iter()
            .flat_map(|(_, ts)| ts.iter().flatten())
            .filter(|t| !index.contains_key(&t.successor))
            .map(|t| t.successor.clone())
            .collect();
        next.sort();
        next.dedup();
        expanded.extend(layer);
        frontier = next;
        layers += 1;
    }

    let mut actions = Vec::with_capacity(states.len());
    let mut transitions = Vec::with_capacity(states.len());
    for (acts, ts) in expanded {
        actions.push(acts);
        transitions.push(
            ts.into_iter()
                .map(|outs| {
                    outs.into_iter()
                        .map(|t| Transition {
                            probability: t.probability,
                            successor: index[&t.successor],
                            reward_attacker: t.reward_attacker,
                            reward_defender: t.reward_defender,
                            progress: t.progress,
                        })
                        .collect()
                })
                .collect(),
        );
    }
    let mut start_idx: Vec<(usize, f64)> = Vec::new();
    for (p, k) in start {
        let s = index[&k];
        match start_idx.iter_mut().find(|(t, _)| *t == s) {
            Some(e) => e.1 += p,
            None => start_idx.push((s, p)),
        }
    }
    let mdp = ExplicitMdp {
        states,
        start: start_idx,
        actions,
        transitions,
        terminal: None,
    };
    let stats = ExplorationStats::of(model, &mdp, layers);
    Ok(Exploration { mdp, stats })
}

/// Path of the cache file for `model` inside `dir`.
pub fn cache_path<M: MdpModel>(model: &M, dir: &Path) -> PathBuf {
    // FNV-1a over the description keeps file names short and stable.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in model.describe().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    dir.join(format!("mdp-{h:016x}.bin"))
}

/// Like [`explore`], but reuses a matching cache file in `cache_dir` and
/// writes one after a fresh exploration.
pub fn explore_cached<M: MdpModel>(
    model: &M,
    options: &ExploreOptions,
    cache_dir: Option<&Path>,
) -> Result<Exploration<M::Action>> {
    let Some(dir) = cache_dir else {
        return explore(model, options);
    };
    let path = cache_path(model, dir);
    let header = model.describe();
    if path.exists() {
        if let Some(mdp) = ExplicitMdp::read_cache(&path, &header)? {
            if mdp.num_states() > options.state_budget {
                return Err(Error::Budget {
                    budget: options.state_budget,
                });
            }
            let stats = ExplorationStats::of(model, &mdp, 0);
            return Ok(Exploration { mdp, stats });
        }
    }
    let ex = explore(model, options)?;
    ex.mdp.write_cache(&path, &header)?;
    Ok(ex)
}
