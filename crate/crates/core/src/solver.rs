//! Probabilistic termination, value iteration and policy evaluation.

use rayon::prelude::*;

use crate::attack::Action;
use crate::baseline::{ChainAction, ChainState, TraditionalModel};
use crate::canonical::StateKey;
use crate::error::{Error, Result};
use crate::mdp::{ExplicitMdp, MdpAction, Transition};

#[derive(Clone, Debug, PartialEq)]
pub struct PtParams {
    /// Expected progress before termination.
    pub horizon: f64,
    /// Stopping threshold on the per-sweep revenue change.
    pub epsilon: f64,
}

impl PtParams {
    pub fn new(horizon: f64, epsilon: f64) -> Result<Self> {
        if !(horizon >= 1.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon {horizon} must be at least 1"
            )));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
        }
        Ok(PtParams { horizon, epsilon })
    }

    /// Probability of not terminating while making `progress`.
    pub fn continue_factor(&self, progress: f64) -> f64 {
        (1.0 - 1.0 / self.horizon).powf(progress)
    }
}

/// Adds an absorbing terminal state and splits every transition with
/// progress `δ` into a continuing branch (factor `(1 - 1/H)^δ`) and a
/// terminating branch. Both branches keep the transition's rewards.
pub fn pt_transform<A: MdpAction>(mdp: &ExplicitMdp<A>, pt: &PtParams) -> ExplicitMdp<A> {
    let terminal = mdp.states.len();
    let transitions = mdp
        .transitions
        .iter()
        .map(|per_action| {
            per_action
                .iter()
                .map(|ts| {
                    let mut out = Vec::with_capacity(ts.len() * 2);
                    for t in ts {
                        let keep = pt.continue_factor(t.progress);
                        if keep >= 1.0 {
                            out.push(t.clone());
                            continue;
                        }
                        out.push(Transition {
                            probability: t.probability * keep,
                            ..t.clone()
                        });
                        out.push(Transition {
                            probability: t.probability * (1.0 - keep),
                            successor: terminal,
                            ..t.clone()
                        });
                    }
                    out.retain(|t| t.probability > 0.0);
                    out
                })
                .collect()
        })
        .chain(std::iter::once(Vec::new()))
        .collect();
    let mut states = mdp.states.clone();
    states.push(StateKey::from_bytes(Vec::new()));
    let mut actions = mdp.actions.clone();
    actions.push(Vec::new());
    ExplicitMdp {
        states,
        start: mdp.start.clone(),
        actions,
        transitions,
        terminal: Some(terminal),
    }
}

/// Chosen action index per state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub choice: Vec<usize>,
}

impl Policy {
    pub fn action<A: MdpAction>(&self, mdp: &ExplicitMdp<A>, s: usize) -> A {
        mdp.actions[s][self.choice[s]]
    }

    /// Restricts a policy of a transformed MDP to the source states.
    pub fn truncated(&self, n: usize) -> Policy {
        Policy {
            choice: self.choice[..n].to_vec(),
        }
    }

    /// CSV with columns `state,key,action`.
    pub fn write_csv<A: MdpAction, W: std::io::Write>(
        &self,
        mdp: &ExplicitMdp<A>,
        w: W,
    ) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["state", "key", "action"])?;
        for s in 0..self.choice.len().min(mdp.states.len()) {
            if Some(s) == mdp.terminal {
                continue;
            }
            out.write_record([
                s.to_string(),
                mdp.states[s].to_hex(),
                self.action(mdp, s).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ViOptions {
    /// Stop once the largest per-sweep value change divided by the horizon
    /// drops below this.
    pub threshold: f64,
    pub horizon: f64,
    pub max_sweeps: usize,
    /// Actions within this of the best value count as ties; the lowest
    /// index wins.
    pub tie_tolerance: f64,
}

impl ViOptions {
    pub fn new(pt: &PtParams) -> Self {
        ViOptions {
            threshold: pt.epsilon * VI_TIGHTENING,
            horizon: pt.horizon,
            max_sweeps: 1_000_000,
            tie_tolerance: 1e-9,
        }
    }
}

/// Factor between epsilon and the value-change threshold. The untightened
/// rule stops after a handful of sweeps, long before the greedy policy
/// settles; `untightened_stopping_misses_the_attack` in the solver tests
/// measures the effect.
pub const VI_TIGHTENING: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct ViResult {
    pub policy: Policy,
    pub values: Vec<f64>,
    pub sweeps: usize,
    /// Largest value change of every sweep.
    pub residuals: Vec<f64>,
}

fn q_value(ts: &[Transition], values: &[f64]) -> f64 {
    ts.iter()
        .map(|t| t.probability * (t.reward_attacker + values[t.successor]))
        .sum()
}

fn greedy(qs: impl Iterator<Item = f64>, tie: f64) -> (usize, f64) {
    let qs: Vec<f64> = qs.collect();
    let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = qs
        .iter()
        .position(|&q| q >= best - tie * (1.0 + best.abs()))
        .unwrap_or(0);
    (k, best)
}

/// Undiscounted value iteration maximizing total attacker reward on an MDP
/// with an absorbing terminal state.
pub fn value_iterate<A: MdpAction>(mdp: &ExplicitMdp<A>, options: &ViOptions) -> Result<ViResult> {
    let terminal = mdp.terminal.ok_or(Error::NonTerminating)?;
    let n = mdp.states.len();
    let mut values = vec![0.0; n];
    let mut residuals = Vec::new();
    loop {
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|s| {
                if s == terminal {
                    return 0.0;
                }
                mdp.transitions[s]
                    .iter()
                    .map(|ts| q_value(ts, &values))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let delta = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        residuals.push(delta);
        if delta / options.horizon < options.threshold {
            break;
        }
        if residuals.len() >= options.max_sweeps || !delta.is_finite() {
            return Err(Error::NonTerminating);
        }
    }
    let choice = (0..n)
        .into_par_iter()
        .map(|s| {
            if s == terminal {
                return 0;
            }
            greedy(
                mdp.transitions[s].iter().map(|ts| q_value(ts, &values)),
                options.tie_tolerance,
            )
            .0
        })
        .collect();
    Ok(ViResult {
        policy: Policy { choice },
        values,
        sweeps: residuals.len(),
        residuals,
    })
}

/// Actions that know which of their siblings is the honest choice.
pub trait HonestAction: MdpAction {
    fn honest_index(state: &StateKey, actions: &[Self]) -> Result<usize>;
}

impl HonestAction for Action {
    /// Release before consider before continue, lowest candidate first.
    fn honest_index(_: &StateKey, actions: &[Self]) -> Result<usize> {
        let find = |pred: fn(&Action) -> bool| actions.iter().position(pred);
        find(|a| matches!(a, Action::Release(1)))
            .or_else(|| find(|a| matches!(a, Action::Consider(1))))
            .or_else(|| find(|a| *a == Action::Continue))
            .ok_or_else(|| Error::State("state without continue action".into()))
    }
}

impl HonestAction for ChainAction {
    fn honest_index(state: &StateKey, actions: &[Self]) -> Result<usize> {
        let want = TraditionalModel::honest_action(ChainState::from_key(state)?);
        actions
            .iter()
            .position(|&a| a == want)
            .ok_or_else(|| Error::State(format!("honest action {want} infeasible")))
    }
}

pub fn honest_policy<A: HonestAction>(mdp: &ExplicitMdp<A>) -> Result<Policy> {
    let choice = (0..mdp.states.len())
        .map(|s| {
            if Some(s) == mdp.terminal {
                Ok(0)
            } else {
                A::honest_index(&mdp.states[s], &mdp.actions[s])
            }
        })
        .collect::<Result<_>>()?;
    Ok(Policy { choice })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RevenueReport {
    /// Long-run attacker reward per unit of progress.
    pub revenue: f64,
    pub expected_progress_per_step: f64,
    pub expected_reward_per_step: f64,
    pub iterations: usize,
    pub residual: f64,
    /// States reachable under the policy.
    pub reachable: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub residual: f64,
    pub restart: f64,
    pub max_iterations: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            residual: 1e-10,
            restart: 1e-12,
            max_iterations: 10_000_000,
        }
    }
}

/// States reachable from the start distribution under `policy`, in
/// increasing index order.
pub fn reachable_states<A: MdpAction>(mdp: &ExplicitMdp<A>, policy: &Policy) -> Vec<usize> {
    let n = mdp.states.len();
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = mdp.start.iter().map(|&(s, _)| s).collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(s) = stack.pop() {
        if Some(s) == mdp.terminal {
            continue;
        }
        for t in &mdp.transitions[s][policy.choice[s]] {
            if !seen[t.successor] {
                seen[t.successor] = true;
                stack.push(t.successor);
            }
        }
    }
    (0..n).filter(|&s| seen[s]).collect()
}

/// Long-run revenue of `policy` in the source MDP, from the stationary
/// distribution of the lazy policy-induced chain.
pub fn evaluate_policy<A: MdpAction>(
    mdp: &ExplicitMdp<A>,
    policy: &Policy,
    options: &EvalOptions,
) -> Result<RevenueReport> {
    if mdp.terminal.is_some() {
        return Err(Error::Config(
            "evaluate the source MDP, not the transformed one".into(),
        ));
    }
    if policy.choice.len() != mdp.states.len()
        || policy
            .choice
            .iter()
            .zip(&mdp.actions)
            .any(|(&c, a)| c >= a.len())
    {
        return Err(Error::Config("policy does not fit the MDP".into()));
    }
    let reach = reachable_states(mdp, policy);
    let m = reach.len();
    let mut local = vec![usize::MAX; mdp.states.len()];
    for (i, &s) in reach.iter().enumerate() {
        local[s] = i;
    }
    // incoming[j] = (i, p): transitions i -> j under the policy
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut reward = vec![0.0; m];
    let mut progress = vec![0.0; m];
    for (i, &s) in reach.iter().enumerate() {
        for t in &mdp.transitions[s][policy.choice[s]] {
            incoming[local[t.successor]].push((i, t.probability));
            reward[i] += t.probability * t.reward_attacker;
            progress[i] += t.probability * t.progress;
        }
    }
    let mut pi = vec![0.0; m];
    for &(s, p) in &mdp.start {
        pi[local[s]] += p;
    }
    let mu = options.restart;
    let uniform = mu / m as f64;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while residual >= options.residual {
        if iterations >= options.max_iterations {
            break;
        }
        let next: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|j| {
                let flow: f64 = incoming[j].iter().map(|&(i, p)| pi[i] * p).sum();
                (1.0 - mu) * 0.5 * (pi[j] + flow) + uniform
            })
            .collect();
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        iterations += 1;
    }
    let total: f64 = pi.iter().sum();
    let expected_reward_per_step = pi.iter().zip(&reward).map(|(p, r)| p * r).sum::<f64>() / total;
    let expected_progress_per_step =
        pi.iter().zip(&progress).map(|(p, r)| p * r).sum::<f64>() / total;
    if expected_progress_per_step < 1e-12 {
        return Err(Error::DegeneratePolicy(expected_progress_per_step));
    }
    Ok(RevenueReport {
        revenue: expected_reward_per_step / expected_progress_per_step,
        expected_progress_per_step,
        expected_reward_per_step,
        iterations,
        residual,
        reachable: m,
    })
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub policy: Policy,
    pub optimal: RevenueReport,
    pub honest: RevenueReport,
    pub sweeps: usize,
    /// Start-distribution value of the transformed MDP divided by H.
    pub pt_estimate: f64,
}

/// Transforms, solves, and evaluates both the optimal and the honest
/// policy in the source MDP.
pub fn solve<A: HonestAction>(mdp: &ExplicitMdp<A>, pt: &PtParams) -> Result<Solution> {
    let transformed = pt_transform(mdp, pt);
    let vi = value_iterate(&transformed, &ViOptions::new(pt))?;
    let policy = vi.policy.truncated(mdp.states.len());
    let eval = EvalOptions::default();
    let optimal = evaluate_policy(mdp, &policy, &eval)?;
    let honest = evaluate_policy(mdp, &honest_policy(mdp)?, &eval)?;
    let pt_estimate = mdp
        .start
        .iter()
        .map(|&(s, p)| p * vi.values[s])
        .sum::<f64>()
        / pt.horizon;
    Ok(Solution {
        policy,
        optimal,
        honest,
        sweeps: vi.sweeps,
        pt_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(successor: usize, probability: f64, reward: f64, progress: f64) -> Transition {
        Transition {
            probability,
            successor,
            reward_attacker: reward,
            reward_defender: 0.0,
            progress,
        }
    }

    fn mdp(
        actions: Vec<Vec<Action>>,
        transitions: Vec<Vec<Vec<Transition>>>,
    ) -> ExplicitMdp<Action> {
        let n = actions.len();
        ExplicitMdp {
            states: (0..n)
                .map(|i| StateKey::from_bytes(vec![i as u8]))
                .collect(),
            start: vec![(0, 1.0)],
            actions,
            transitions,
            terminal: None,
        }
    }

    #[test]
    fn pt_params_are_validated() {
        assert!(PtParams::new(0.5, 0.01).is_err());
        assert!(PtParams::new(30.0, 0.0).is_err());
        assert!(PtParams::new(30.0, 0.01).is_ok());
    }

    #[test]
    fn transform_factors() {
        let pt = PtParams::new(100.0, 0.01).unwrap();
        let m = mdp(
            vec![vec![Action::Continue]],
            vec![vec![vec![t(0, 0.5, 1.0, 0.0), t(0, 0.5, 2.0, 1.0)]]],
        );
        let x = pt_transform(&m, &pt);
        x.validate(1e-12).unwrap();
        assert_eq!(x.terminal, Some(1));
        let ts = &x.transitions[0][0];
        assert_eq!(ts[0], t(0, 0.5, 1.0, 0.0));
        assert!((ts[1].probability - 0.5 * 0.99).abs() < 1e-15);
        assert_eq!(ts[2].successor, 1);
        assert!((ts[2].probability - 0.5 * 0.01).abs() < 1e-15);
        assert_eq!(ts[2].reward_attacker, 2.0);
    }

    #[test]
    fn value_iteration_needs_a_terminal() {
        let m = mdp(
            vec![vec![Action::Continue]],
            vec![vec![vec![t(0, 1.0, 0.0, 1.0)]]],
        );
        assert!(matches!(
            value_iterate(&m, &ViOptions::new(&PtParams::new(10.0, 0.01).unwrap())),
            Err(Error::NonTerminating)
        ));
    }

    #[test]
    fn zero_reward_terminating_state_has_value_zero() {
        let pt = PtParams::new(10.0, 0.01).unwrap();
        let m = pt_transform(
            &mdp(
                vec![vec![Action::Continue]],
                vec![vec![vec![t(0, 1.0, 0.0, 1.0)]]],
            ),
            &pt,
        );
        let vi = value_iterate(&m, &ViOptions::new(&pt)).unwrap();
        assert_eq!(vi.values, vec![0.0, 0.0]);
    }

    #[test]
    fn greedy_prefers_the_dominating_action() {
        let pt = PtParams::new(10.0, 0.01).unwrap();
        let m = mdp(
            vec![vec![Action::Release(1), Action::Continue]],
            vec![vec![vec![t(0, 1.0, 0.2, 1.0)], vec![t(0, 1.0, 0.7, 1.0)]]],
        );
        let vi = value_iterate(&pt_transform(&m, &pt), &ViOptions::new(&pt)).unwrap();
        assert_eq!(vi.policy.choice[0], 1);
        // geometric series: 0.7 per step, H steps in expectation
        assert!((vi.values[0] - 7.0).abs() < 1e-3);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let pt = PtParams::new(10.0, 0.01).unwrap();
        let m = mdp(
            vec![vec![Action::Release(1), Action::Continue]],
            vec![vec![vec![t(0, 1.0, 0.5, 1.0)], vec![t(0, 1.0, 0.5, 1.0)]]],
        );
        let vi = value_iterate(&pt_transform(&m, &pt), &ViOptions::new(&pt)).unwrap();
        assert_eq!(vi.policy.choice[0], 0);
    }

    #[test]
    fn evaluation_of_a_two_state_cycle() {
        // 0 -> 1 (reward 1, progress 1), 1 -> 0 (reward 0, progress 3)
        let m = mdp(
            vec![vec![Action::Continue], vec![Action::Continue]],
            vec![
                vec![vec![t(1, 1.0, 1.0, 1.0)]],
                vec![vec![t(0, 1.0, 0.0, 3.0)]],
            ],
        );
        let r =
            evaluate_policy(&m, &Policy { choice: vec![0, 0] }, &EvalOptions::default()).unwrap();
        assert!((r.revenue - 0.25).abs() < 1e-9, "{r:?}");
        assert!((r.expected_progress_per_step - 2.0).abs() < 1e-9);
        assert_eq!(r.reachable, 2);
    }

    #[test]
    fn zero_progress_policy_is_degenerate() {
        let m = mdp(
            vec![vec![Action::Continue]],
            vec![vec![vec![t(0, 1.0, 1.0, 0.0)]]],
        );
        assert!(matches!(
            evaluate_policy(&m, &Policy { choice: vec![0] }, &EvalOptions::default()),
            Err(Error::DegeneratePolicy(_))
        ));
    }

    #[test]
    fn honest_choices() {
        let m = mdp(
            vec![
                vec![Action::Continue],
                vec![Action::Release(1), Action::Consider(1), Action::Continue],
                vec![Action::Consider(1), Action::Consider(2), Action::Continue],
            ],
            vec![
                vec![vec![]],
                vec![vec![], vec![], vec![]],
                vec![vec![], vec![], vec![]],
            ],
        );
        assert_eq!(honest_policy(&m).unwrap().choice, vec![0, 0, 0]);
    }
}
