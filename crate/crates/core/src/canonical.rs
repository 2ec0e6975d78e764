//! Canonical forms for vertex-colored dags with ordered parent lists.
//!
//! Two dags get the same [`StateKey`] iff there is a bijection between
//! their blocks that preserves colors and maps every parent list, in
//! order, onto the corresponding parent list.
//!
//! The labeling is found by color refinement followed by
//! individualization of the first non-singleton cell, keeping the
//! lexicographically smallest serialization among all leaves. The initial
//! coloring starts with the longest-path depth, so the canonical order is
//! always topological.

use std::fmt;

use crate::dag::{BlockDag, Labels};
use crate::error::{Error, Result};
use crate::protocol::BlockId;

/// Canonical serialization of a colored dag.
///
/// Layout: vertex count, then per vertex in canonical order its color,
/// its parent count and its parents' canonical positions. All fields are
/// single bytes.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey(Box<[u8]>);

impl StateKey {
    pub fn from_bytes(bytes: impl Into<Box<[u8]>>) -> Self {
        StateKey(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        hex::decode(s.trim())
            .map(|b| StateKey(b.into()))
            .map_err(|e| Error::Config(format!("malformed state key `{s}`: {e}")))
    }

    /// Number of blocks encoded in the key.
    pub fn block_count(&self) -> usize {
        self.0.first().copied().unwrap_or(0) as usize
    }

    /// Rebuilds the dag in canonical order.
    pub fn to_dag(&self) -> Result<BlockDag> {
        let bad = || Error::state(format!("malformed state key {}", self.to_hex()));
        let mut it = self.0.iter().copied();
        let n = it.next().ok_or_else(bad)? as usize;
        let mut parts = Vec::with_capacity(n);
        for _ in 0..n {
            let labels = Labels::from_color(it.next().ok_or_else(bad)?).ok_or_else(bad)?;
            let k = it.next().ok_or_else(bad)? as usize;
            let mut parents = Vec::with_capacity(k);
            for _ in 0..k {
                parents.push(BlockId::new(it.next().ok_or_else(bad)? as usize));
            }
            parts.push((parents, labels));
        }
        if it.next().is_some() {
            return Err(bad());
        }
        BlockDag::from_parts(parts)
    }
}

impl fmt::Debug for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateKey({})", self.to_hex())
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Debug)]
pub struct CanonicalForm {
    pub key: StateKey,
    /// `order[k]` is the block placed at canonical position `k`.
    pub order: Vec<BlockId>,
    /// Whether refinement alone separated all blocks (no backtracking).
    pub refined_discrete: bool,
}

impl CanonicalForm {
    /// The dag renumbered into canonical order.
    pub fn relabeled(&self, dag: &BlockDag) -> Result<BlockDag> {
        dag.relabel(&self.order)
    }
}

/// A vertex's cell, its parents' cells in order, and its children's
/// (cell, parent position) pairs sorted.
type Signature = (u32, Vec<u32>, Vec<(u32, usize)>);

struct Graph {
    colors: Vec<u8>,
    parents: Vec<Vec<usize>>,
    /// (child, position of this vertex in the child's parent list)
    children: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    fn new(dag: &BlockDag) -> Result<Self> {
        let n = dag.len();
        let mut colors = Vec::with_capacity(n);
        let mut parents = Vec::with_capacity(n);
        let mut children = vec![Vec::new(); n];
        for b in dag.ids() {
            colors.push(dag.labels(b)?.color());
            let ps: Vec<usize> = dag.parents(b)?.iter().map(|p| p.index()).collect();
            for (pos, &p) in ps.iter().enumerate() {
                children[p].push((b.index(), pos));
            }
            parents.push(ps);
        }
        Ok(Graph {
            colors,
            parents,
            children,
        })
    }

    fn len(&self) -> usize {
        self.colors.len()
    }

    fn initial_cells(&self, dag: &BlockDag) -> Result<Vec<u32>> {
        let n = self.len();
        let mut depth = vec![0u32; n];
        for v in 0..n {
            for &p in &self.parents[v] {
                depth[v] = depth[v].max(depth[p] + 1);
            }
        }
        let mut inv = Vec::with_capacity(n);
        for v in 0..n {
            inv.push((
                depth[v],
                self.colors[v],
                dag.height(BlockId::new(v))?,
                self.parents[v].len(),
                self.children[v].len(),
            ));
        }
        Ok(ranks(&inv))
    }

    /// Refines until the number of cells stops growing.
    fn refine(&self, mut cells: Vec<u32>) -> Vec<u32> {
        let n = self.len();
        let mut count = distinct(&cells);
        loop {
            if count == n {
                return cells;
            }
            let sigs: Vec<Signature> = (0..n)
                .map(|v| {
                    let ps = self.parents[v].iter().map(|&p| cells[p]).collect();
                    let mut cs: Vec<(u32, usize)> = self.children[v]
                        .iter()
                        .map(|&(c, pos)| (cells[c], pos))
                        .collect();
                    cs.sort_unstable();
                    (cells[v], ps, cs)
                })
                .collect();
            let next = ranks(&sigs);
            let next_count = distinct(&next);
            cells = next;
            if next_count == count {
                return cells;
            }
            count = next_count;
        }
    }

    fn serialize(&self, cells: &[u32]) -> (Vec<u8>, Vec<usize>) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by_key(|&v| cells[v]);
        let mut pos = vec![0usize; n];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let mut out = Vec::with_capacity(1 + 3 * n);
        out.push(n as u8);
        for &v in &order {
            out.push(self.colors[v]);
            out.push(self.parents[v].len() as u8);
            out.extend(self.parents[v].iter().map(|&p| pos[p] as u8));
        }
        (out, order)
    }

    fn search(&self, cells: Vec<u32>, best: &mut Option<(Vec<u8>, Vec<usize>)>) {
        let n = self.len();
        if distinct(&cells) == n {
            let (ser, order) = self.serialize(&cells);
            if best.as_ref().is_none_or(|(b, _)| ser < *b) {
                *best = Some((ser, order));
            }
            return;
        }
        let mut sizes = vec![0usize; n];
        for &c in &cells {
            sizes[c as usize] += 1;
        }
        let target = sizes
            .iter()
            .position(|&s| s > 1)
            .expect("non-discrete partition") as u32;
        for v in (0..n).filter(|&v| cells[v] == target) {
            let split: Vec<(u32, bool)> = (0..n)
                .map(|u| (cells[u], cells[u] == target && u != v))
                .collect();
            let refined = self.refine(ranks(&split));
            self.search(refined, best);
        }
    }
}

fn ranks<T: Ord + Clone>(items: &[T]) -> Vec<u32> {
    let mut sorted: Vec<&T> = items.iter().collect();
    sorted.sort_unstable();
    sorted.dedup();
    items
        .iter()
        .map(|x| sorted.binary_search(&x).expect("present") as u32)
        .collect()
}

fn distinct(cells: &[u32]) -> usize {
    let mut seen = vec![false; cells.len()];
    let mut count = 0;
    for &c in cells {
        if !seen[c as usize] {
            seen[c as usize] = true;
            count += 1;
        }
    }
    count
}

/// Computes the canonical labeling of `dag`.
pub fn canonical_form(dag: &BlockDag) -> Result<CanonicalForm> {
    if dag.len() > u8::MAX as usize {
        return Err(Error::state(format!(
            "dag with {} blocks exceeds the canonical key limit of 255",
            dag.len()
        )));
    }
    let g = Graph::new(dag)?;
    let cells = g.refine(g.initial_cells(dag)?);
    let refined_discrete = distinct(&cells) == g.len();
    let mut best = None;
    g.search(cells, &mut best);
    let (bytes, order) = best.expect("search visits at least one leaf");
    Ok(CanonicalForm {
        key: StateKey(bytes.into()),
        order: order.into_iter().map(BlockId::new).collect(),
        refined_discrete,
    })
}

pub fn canonical_key(dag: &BlockDag) -> Result<StateKey> {
    Ok(canonical_form(dag)?.key)
}

pub fn canonical_order(dag: &BlockDag) -> Result<Vec<BlockId>> {
    Ok(canonical_form(dag)?.order)
}
