#![allow(dead_code)]

use dagsm::attack::{AttackModel, Outcome};
use dagsm::dag::{BlockDag, Labels};
use dagsm::{BlockId, Miner};
use rand::seq::SliceRandom;
use rand::Rng;

/// Brute force: is there a bijection preserving colors and ordered parent
/// lists? Tries every permutation.
pub fn isomorphic(x: &BlockDag, y: &BlockDag) -> bool {
    let n = x.len();
    if n != y.len() {
        return false;
    }
    let colors = |d: &BlockDag| {
        let mut c: Vec<u8> = d.ids().map(|b| d.labels(b).unwrap().color()).collect();
        c.sort();
        c
    };
    if colors(x) != colors(y) {
        return false;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut used = vec![false; n];
    fn rec(
        x: &BlockDag,
        y: &BlockDag,
        k: usize,
        perm: &mut Vec<usize>,
        used: &mut Vec<bool>,
    ) -> bool {
        let n = x.len();
        if k == n {
            return true;
        }
        let bx = BlockId::new(k);
        for v in 0..n {
            if used[v] {
                continue;
            }
            let by = BlockId::new(v);
            if x.labels(bx).unwrap() != y.labels(by).unwrap() {
                continue;
            }
            let px = x.parents(bx).unwrap();
            let py = y.parents(by).unwrap();
            // parents carry smaller ids, so they are already mapped
            if px.len() != py.len() || px.iter().zip(py).any(|(a, b)| perm[a.index()] != b.index())
            {
                continue;
            }
            used[v] = true;
            perm[k] = v;
            if rec(x, y, k + 1, perm, used) {
                return true;
            }
            used[v] = false;
        }
        false
    }
    rec(x, y, 0, &mut perm, &mut used)
}

/// Random single-rooted dag with up to `max_n` blocks, 1 to 3 ordered
/// parents per block and colors drawn from `palette`.
pub fn random_dag(rng: &mut impl Rng, max_n: usize, palette: &[u8]) -> BlockDag {
    let n = rng.gen_range(1..=max_n);
    let mut parts = Vec::with_capacity(n);
    let color =
        |rng: &mut dyn rand::RngCore| Labels::from_color(*palette.choose(rng).unwrap()).unwrap();
    parts.push((vec![], color(rng)));
    for i in 1..n {
        let k = rng.gen_range(1..=3.min(i));
        let mut pool: Vec<usize> = (0..i).collect();
        pool.shuffle(rng);
        let parents = pool[..k].iter().map(|&p| BlockId::new(p)).collect();
        parts.push((parents, color(rng)));
    }
    BlockDag::from_parts(parts).unwrap()
}

/// The same dag renumbered along a random topological order that keeps
/// the root first.
pub fn shuffled(rng: &mut impl Rng, d: &BlockDag) -> BlockDag {
    let n = d.len();
    let mut placed = vec![false; n];
    let mut order = vec![d.genesis()];
    placed[0] = true;
    while order.len() < n {
        let ready: Vec<BlockId> = d
            .ids()
            .filter(|b| {
                !placed[b.index()] && d.parents(*b).unwrap().iter().all(|p| placed[p.index()])
            })
            .collect();
        let b = *ready.choose(rng).unwrap();
        placed[b.index()] = true;
        order.push(b);
    }
    d.relabel(&order).unwrap()
}

/// Replays trajectories against an untruncated record of every mined
/// block, so that rewards can be recomputed from scratch.
pub struct Replay {
    /// Every block ever mined: parents (full ids) and miner. Entry 0 is
    /// the initial genesis.
    pub full: Vec<(Vec<usize>, Miner)>,
    /// Full id of each block of the current state.
    pub tags: Vec<usize>,
    pub state: BlockDag,
    pub reward_attacker: f64,
    pub reward_defender: f64,
    pub progress: f64,
    pub steps: usize,
}

impl Replay {
    pub fn new(start: BlockDag) -> Self {
        let miner = start.miner(start.genesis()).unwrap();
        Replay {
            full: vec![(vec![], miner)],
            tags: vec![0],
            state: start,
            reward_attacker: 0.0,
            reward_defender: 0.0,
            progress: 0.0,
            steps: 0,
        }
    }

    /// Applies one sampled outcome.
    pub fn apply(&mut self, o: &Outcome) {
        let mut ext = self.tags.clone();
        if let Some(m) = &o.mined {
            let parents = m.parents.iter().map(|p| self.tags[p.index()]).collect();
            self.full.push((parents, m.miner));
            ext.push(self.full.len() - 1);
        }
        assert_eq!(o.id_map.len(), ext.len());
        let mut tags = vec![usize::MAX; o.state.len()];
        for (i, m) in o.id_map.iter().enumerate() {
            if let Some(j) = m {
                tags[j.index()] = ext[i];
            }
        }
        assert!(
            tags.iter().all(|&t| t != usize::MAX),
            "unmapped block after step"
        );
        self.tags = tags;
        self.state = o.state.clone();
        self.reward_attacker += o.reward_attacker;
        self.reward_defender += o.reward_defender;
        self.progress += o.progress;
        self.steps += 1;
    }

    /// Settled blocks according to the full record: the first-parent chain
    /// from the current genesis down to, but excluding, the initial
    /// genesis.
    pub fn settled(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.tags[0];
        while cur != 0 {
            out.push(cur);
            cur = self.full[cur].0[0];
        }
        out
    }
}

/// Runs one random trajectory, sampling actions uniformly and outcomes by
/// probability.
pub fn random_trajectory(model: &AttackModel, rng: &mut impl Rng, steps: usize) -> Replay {
    let starts = model.start_states();
    let mut replay = {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = starts[starts.len() - 1].1.clone();
        for (p, d) in &starts {
            acc += p;
            if u < acc {
                pick = d.clone();
                break;
            }
        }
        Replay::new(pick)
    };
    for _ in 0..steps {
        let actions = model.feasible_actions(&replay.state);
        let a = *actions.choose(rng).unwrap();
        let outcomes = model.step(&replay.state, a).unwrap();
        let total: f64 = outcomes.iter().map(|o| o.probability).sum();
        assert!((total - 1.0).abs() < 1e-12, "outcome mass {total}");
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = outcomes.last().unwrap();
        for o in &outcomes {
            acc += o.probability;
            if u < acc {
                chosen = o;
                break;
            }
        }
        replay.apply(chosen);
    }
    replay
}
