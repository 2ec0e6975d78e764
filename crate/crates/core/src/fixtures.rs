//! Hand-built states shared by unit tests, integration tests and the CLI.

use crate::dag::{BlockDag, DefenderView::*, IgnoreStatus::*, Labels, WithholdStatus::*};
use crate::protocol::BlockId;

/// Blocks of the six-block example state: an attacker chain of three
/// (two released, the withheld tip preferred by the attacker) racing a
/// defender chain of two (the first preferred by the defender, the second
/// just mined and still unknown to it).
///
/// Entries are `(name, parent name, labels)` with the genesis first.
pub const FIGURE_ONE: [(&str, Option<&str>, Labels); 6] = [
    ("g", None, Labels::new(Known, Considered, Foreign)),
    ("a1", Some("g"), Labels::new(Unknown, Considered, Released)),
    ("a2", Some("a1"), Labels::new(Unknown, Considered, Released)),
    ("a3", Some("a2"), Labels::new(Unknown, PreferredA, Withheld)),
    ("d1", Some("g"), Labels::new(PreferredD, Ignored, Foreign)),
    ("d2", Some("d1"), Labels::new(Unknown, Ignored, Foreign)),
];

/// The example state in its natural insertion order.
pub fn figure_one() -> BlockDag {
    figure_one_in_order(&[0, 1, 2, 3, 4, 5])
}

/// Builds the example state inserting blocks in the given order of
/// `FIGURE_ONE` indices. The order must start with the genesis and list
/// parents before children.
pub fn figure_one_in_order(order: &[usize]) -> BlockDag {
    let mut pos = [usize::MAX; 6];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    let parts = order
        .iter()
        .map(|&i| {
            let (_, parent, labels) = FIGURE_ONE[i];
            let parents = match parent {
                None => vec![],
                Some(name) => {
                    let p = FIGURE_ONE.iter().position(|(n, _, _)| *n == name).unwrap();
                    vec![BlockId::new(pos[p])]
                }
            };
            (parents, labels)
        })
        .collect();
    BlockDag::from_parts(parts).expect("valid example state")
}

/// All insertion orders of the example state that respect parent links.
pub fn figure_one_insertion_orders() -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == FIGURE_ONE.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..FIGURE_ONE.len() {
            if prefix.contains(&i) {
                continue;
            }
            let ready = match FIGURE_ONE[i].1 {
                None => true,
                Some(name) => prefix.iter().any(|&j| FIGURE_ONE[j].0 == name),
            };
            if ready {
                prefix.push(i);
                extend(prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut vec![0], &mut out);
    out
}
