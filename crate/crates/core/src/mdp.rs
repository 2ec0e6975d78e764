//! Explicit MDPs: indexed states, per-state action lists and sparse
//! transitions, plus the model interface the explorer enumerates.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::canonical::StateKey;
use crate::error::{Error, Result};

/// Action type of an MDP. Codes must round-trip and be stable across
/// versions since they are written to cache files.
pub trait MdpAction: Copy + Eq + Ord + fmt::Debug + fmt::Display + Send + Sync {
    fn code(self) -> u32;
    fn from_code(code: u32) -> Option<Self>;
}

/// One outcome of a state-action pair, before successors are indexed.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyedTransition {
    pub probability: f64,
    pub successor: StateKey,
    pub reward_attacker: f64,
    pub reward_defender: f64,
    pub progress: f64,
}

/// A model whose reachable state space can be enumerated. States are
/// identified by their key.
pub trait MdpModel: Sync {
    type Action: MdpAction;

    /// Start distribution. Probabilities sum to one.
    fn start(&self) -> Result<Vec<(f64, StateKey)>>;

    /// Feasible actions, in index order.
    fn actions(&self, state: &StateKey) -> Result<Vec<Self::Action>>;

    fn transitions(&self, state: &StateKey, action: Self::Action) -> Result<Vec<KeyedTransition>>;

    /// Size of a state for statistics (blocks for dag states).
    fn state_size(&self, state: &StateKey) -> usize {
        state.block_count()
    }

    /// Identifies the model and its parameters; stored in cache headers.
    fn describe(&self) -> String;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub probability: f64,
    pub successor: usize,
    pub reward_attacker: f64,
    pub reward_defender: f64,
    pub progress: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitMdp<A> {
    pub states: Vec<StateKey>,
    pub start: Vec<(usize, f64)>,
    pub actions: Vec<Vec<A>>,
    /// `transitions[s][k]` lists the outcomes of `actions[s][k]`.
    pub transitions: Vec<Vec<Vec<Transition>>>,
    /// Absorbing state added by the termination transform.
    pub terminal: Option<usize>,
}

const MAGIC: &[u8; 8] = b"DAGSMMDP";
const VERSION: u32 = 1;

impl<A: MdpAction> ExplicitMdp<A> {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_state_actions(&self) -> usize {
        self.actions.iter().map(Vec::len).sum()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.iter().flatten().map(Vec::len).sum()
    }

    pub fn index_of(&self, key: &StateKey) -> Option<usize> {
        self.states.iter().position(|k| k == key)
    }

    /// Checks indices, probability mass and progress signs.
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        let n = self.states.len();
        let bad = |msg: String| Err(Error::State(msg));
        if self.actions.len() != n || self.transitions.len() != n {
            return bad("per-state tables disagree in length".into());
        }
        let start: f64 = self.start.iter().map(|&(_, p)| p).sum();
        if (start - 1.0).abs() > tolerance || self.start.iter().any(|&(s, _)| s >= n) {
            return bad(format!("start distribution has mass {start}"));
        }
        for s in 0..n {
            if Some(s) == self.terminal {
                if !self.actions[s].is_empty() {
                    return bad("terminal state has actions".into());
                }
                continue;
            }
            if self.actions[s].is_empty() || self.actions[s].len() != self.transitions[s].len() {
                return bad(format!("state {s} has inconsistent actions"));
            }
            for (a, ts) in self.actions[s].iter().zip(&self.transitions[s]) {
                let mass: f64 = ts.iter().map(|t| t.probability).sum();
                if (mass - 1.0).abs() > tolerance {
                    return bad(format!("state {s} action {a} has mass {mass}"));
                }
                for t in ts {
                    if t.successor >= n || !(t.probability > 0.0) || t.progress < 0.0 {
                        return bad(format!("state {s} action {a} has a malformed transition"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the MDP in a compact little-endian binary format. `header`
    /// identifies the model; [`ExplicitMdp::read_cache`] rejects files
    /// written for a different header.
    pub fn write_cache(&self, path: &Path, header: &str) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_bytes(&mut buf, header.as_bytes());
        put_u32(&mut buf, self.states.len() as u32);
        for k in &self.states {
            put_bytes(&mut buf, k.as_bytes());
        }
        put_u32(&mut buf, self.start.len() as u32);
        for &(s, p) in &self.start {
            put_u32(&mut buf, s as u32);
            buf.extend_from_slice(&p.to_le_bytes());
        }
        buf.extend_from_slice(&self.terminal.map_or(u32::MAX, |t| t as u32).to_le_bytes());
        for (acts, trs) in self.actions.iter().zip(&self.transitions) {
            put_u32(&mut buf, acts.len() as u32);
            for (a, ts) in acts.iter().zip(trs) {
                put_u32(&mut buf, a.code());
                put_u32(&mut buf, ts.len() as u32);
                for t in ts {
                    put_u32(&mut buf, t.successor as u32);
                    for x in [
                        t.probability,
                        t.reward_attacker,
                        t.reward_defender,
                        t.progress,
                    ] {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a cache file. Returns `Ok(None)` when the file was written for
    /// another model.
    pub fn read_cache(path: &Path, header: &str) -> Result<Option<Self>> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Cache(format!("{}: bad magic", path.display())));
        }
        if r.u32()? != VERSION {
            return Ok(None);
        }
        if r.bytes()? != header.as_bytes() {
            return Ok(None);
        }
        let n = r.u32()? as usize;
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            states.push(StateKey::from_bytes(r.bytes()?.to_vec()));
        }
        let mut start = Vec::new();
        for _ in 0..r.u32()? {
            start.push((r.u32()? as usize, r.f64()?));
        }
        let terminal = match r.u32()? {
            u32::MAX => None,
            t => Some(t as usize),
        };
        let mut actions = Vec::with_capacity(n);
        let mut transitions = Vec::with_capacity(n);
        for _ in 0..n {
            let k = r.u32()? as usize;
            let mut acts = Vec::with_capacity(k);
            let mut trs = Vec::with_capacity(k);
            for _ in 0..k {
                let code = r.u32()?;
                acts.push(
                    A::from_code(code)
                        .ok_or_else(|| Error::Cache(format!("unknown action code {code}")))?,
                );
                let m = r.u32()? as usize;
                let mut ts = Vec::with_capacity(m);
                for _ in 0..m {
                    let successor = r.u32()? as usize;
                    ts.push(Transition {
                        successor,
                        probability: r.f64()?,
                        reward_attacker: r.f64()?,
                        reward_defender: r.f64()?,
                        progress: r.f64()?,
                    });
                }
                trs.push(ts);
            }
            actions.push(acts);
            transitions.push(trs);
        }
        if r.pos != buf.len() {
            return Err(Error::Cache(format!("{}: trailing bytes", path.display())));
        }
        let mdp = ExplicitMdp {
            states,
            start,
            actions,
            transitions,
            terminal,
        };
        mdp.validate(1e-9)
            .map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
        Ok(Some(mdp))
    }
}

fn put_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u32(buf, b.len() as u32);
    buf.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Cache("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}
