//! Finite-horizon tabular MDPs with a KL-regularised (soft) objective.
//!
//! Policies are indexed by timestep because the finite-horizon optimum is
//! nonstationary. Value tables carry `H + 1` rows with `V[H] = 0`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMDP {
    states: usize,
    actions: usize,
    horizon: usize,
    reward_bound: f64,
    initial_state: usize,
    /// `P[s][a][s']`, row-major.
    transitions: Vec<f64>,
    /// `r[s][a]`, row-major.
    rewards: Vec<f64>,
}

impl TabularMDP {
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        reward_bound: f64,
        initial_state: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(Error::invalid("an MDP needs S, A, H >= 1"));
        }
        if !(reward_bound > 0.0 && reward_bound.is_finite()) {
            return Err(Error::invalid(format!("reward bound must be > 0, got {reward_bound}")));
        }
        if initial_state >= states {
            return Err(Error::invalid(format!("initial state {initial_state} out of range")));
        }
        if transitions.len() != states * actions * states || rewards.len() != states * actions {
            return Err(Error::invalid("transition or reward table has the wrong size"));
        }
        for (i, row) in transitions.chunks(states).enumerate() {
            check_distribution(row).map_err(|m| {
                Error::invalid(format!("P[{}][{}] {m}", i / actions, i % actions))
            })?;
        }
        if let Some(r) = rewards.iter().find(|r| !(r.abs() <= reward_bound)) {
            return Err(Error::invalid(format!("reward {r} exceeds bound {reward_bound}")));
        }
        Ok(Self {
            states,
            actions,
            horizon,
            reward_bound,
            initial_state,
            transitions,
            rewards,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Next-state distribution for `(s, a)`.
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.actions + a) * self.states;
        &self.transitions[start..start + self.states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.actions + a]
    }

    /// Whether every transition row puts all its mass on one state.
    pub fn is_deterministic(&self) -> bool {
        self.transitions
            .chunks(self.states)
            .all(|row| row.iter().any(|&p| p == 1.0))
    }

    fn expect(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition(s, a).iter().zip(v).map(|(p, x)| p * x).sum()
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err("has a negative or non-finite entry".into());
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Action distributions per `(t, s)` for `t < H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    horizon: usize,
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(horizon: usize, states: usize, actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != horizon * states * actions || actions == 0 {
            return Err(Error::invalid("policy table has the wrong size"));
        }
        for (i, row) in probs.chunks(actions).enumerate() {
            check_distribution(row).map_err(|m| {
                Error::invalid(format!("policy row t={} s={} {m}", i / states, i % states))
            })?;
        }
        Ok(Self {
            horizon,
            states,
            actions,
            probs,
        })
    }

    pub fn uniform(horizon: usize, states: usize, actions: usize) -> Self {
        Self {
            horizon,
            states,
            actions,
            probs: vec![1.0 / actions as f64; horizon * states * actions],
        }
    }

    /// The same per-state rows at every timestep.
    pub fn stationary(horizon: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let actions = rows.first().map_or(0, Vec::len);
        let probs = (0..horizon).flat_map(|_| rows.iter().flatten().copied()).collect();
        Self::new(horizon, rows.len(), actions, probs)
    }

    /// Picks action `choice[t][s]` with probability one.
    pub fn deterministic(actions: usize, choice: &[Vec<usize>]) -> Result<Self> {
        let states = choice.first().map_or(0, Vec::len);
        let mut probs = vec![0.0; choice.len() * states * actions];
        for (t, row) in choice.iter().enumerate() {
            for (s, &a) in row.iter().enumerate() {
                if a >= actions || row.len() != states {
                    return Err(Error::invalid("deterministic policy choice out of range"));
                }
                probs[(t * states + s) * actions + a] = 1.0;
            }
        }
        Self::new(choice.len(), states, actions, probs)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let start = (t * self.states + s) * self.actions;
        &self.probs[start..start + self.actions]
    }

    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.row(t, s)[a]
    }

    fn check_fits(&self, mdp: &TabularMDP) -> Result<()> {
        if self.horizon < mdp.horizon || self.states != mdp.states || self.actions != mdp.actions {
            return Err(Error::invalid(format!(
                "policy shape (H={}, S={}, A={}) does not fit MDP (H={}, S={}, A={})",
                self.horizon, self.states, self.actions, mdp.horizon, mdp.states, mdp.actions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    horizon: usize,
    states: usize,
    actions: usize,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueTable {
    /// `V[t][s]` for `t <= H`.
    pub fn v(&self, t: usize, s: usize) -> f64 {
        self.v[t * self.states + s]
    }

    pub fn q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q[(t * self.states + s) * self.actions + a]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Backward induction for the soft objective
/// `Q = r + beta log pi_ref + gamma E[V']`, `V = beta logsumexp(Q / beta)`.
/// Returns the values and the Boltzmann policy `exp((Q - V) / beta)`.
pub fn soft_value_iteration(
    mdp: &TabularMDP,
    pi_ref: &PolicyTable,
    beta: f64,
    gamma: f64,
) -> Result<(ValueTable, PolicyTable)> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    pi_ref.check_fits(mdp)?;
    let (h, ns, na) = (mdp.horizon, mdp.states, mdp.actions);
    let mut v = vec![0.0; (h + 1) * ns];
    let mut q = vec![0.0; h * ns * na];
    let mut probs = vec![0.0; h * ns * na];
    for t in (0..h).rev() {
        let (now, next) = v.split_at_mut((t + 1) * ns);
        let next = &next[..ns];
        for s in 0..ns {
            let base = (t * ns + s) * na;
            for a in 0..na {
                let p_ref = pi_ref.prob(t, s, a);
                if p_ref <= 0.0 {
                    return Err(Error::SupportMismatch { t, state: s, action: a });
                }
                q[base + a] = mdp.reward(s, a) + beta * p_ref.ln() + gamma * mdp.expect(s, a, next);
            }
            let scaled: Vec<f64> = q[base..base + na].iter().map(|x| x / beta).collect();
            let vs = beta * logsumexp(&scaled);
            now[t * ns + s] = vs;
            for a in 0..na {
                probs[base + a] = ((q[base + a] - vs) / beta).exp();
            }
        }
    }
    let values = ValueTable {
        horizon: h,
        states: ns,
        actions: na,
        v,
        q,
    };
    let policy = PolicyTable::new(h, ns, na, probs)?;
    Ok((values, policy))
}

/// Both sides of the trajectory reward identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Compares `sum_t gamma^t r(s_t, a_t)` against
/// `V*(s_0) + sum_t gamma^t beta log(pi*(a_t|s_t) / pi_ref(a_t|s_t))`.
///
/// The two agree exactly on full-length trajectories of MDPs with
/// deterministic transitions; with stochastic transitions they agree only in
/// expectation over next states.
pub fn trajectory_identity_check(
    mdp: &TabularMDP,
    pi_ref: &PolicyTable,
    beta: f64,
    gamma: f64,
    trajectory: &[(usize, usize)],
) -> Result<TrajectoryIdentity> {
    if trajectory.is_empty() || trajectory.len() > mdp.horizon {
        return Err(Error::invalid(format!(
            "trajectory length {} not in 1..={}",
            trajectory.len(),
            mdp.horizon
        )));
    }
    for (t, &(s, a)) in trajectory.iter().enumerate() {
        if s >= mdp.states || a >= mdp.actions {
            return Err(Error::invalid(format!("step {t} ({s}, {a}) out of range")));
        }
        if let Some(&(next, _)) = trajectory.get(t + 1) {
            if next >= mdp.states || mdp.transition(s, a)[next] <= 0.0 {
                return Err(Error::invalid(format!("step {t}: transition {s} -({a})-> {next} has zero probability")));
            }
        }
    }
    let (values, pi_star) = soft_value_iteration(mdp, pi_ref, beta, gamma)?;
    let mut lhs = 0.0;
    let mut rhs = values.v(0, trajectory[0].0);
    let mut discount = 1.0;
    for (t, &(s, a)) in trajectory.iter().enumerate() {
        lhs += discount * mdp.reward(s, a);
        rhs += discount * beta * (pi_star.prob(t, s, a).ln() - pi_ref.prob(t, s, a).ln());
        discount *= gamma;
    }
    Ok(TrajectoryIdentity {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

fn policy_values(mdp: &TabularMDP, pi: &PolicyTable, gamma: f64, horizon: usize) -> Vec<f64> {
    let ns = mdp.states;
    let mut v = vec![0.0; ns];
    for t in (0..horizon).rev() {
        v = (0..ns)
            .map(|s| {
                pi.row(t, s)
                    .iter()
                    .enumerate()
                    .map(|(a, p)| p * (mdp.reward(s, a) + gamma * mdp.expect(s, a, &v)))
                    .sum()
            })
            .collect();
    }
    v
}

/// Exact expected return `E[sum_{t<H} gamma^t r(s_t, a_t) | s_0 = s]`.
pub fn policy_value(mdp: &TabularMDP, pi: &PolicyTable, gamma: f64, s: usize) -> Result<f64> {
    policy_value_horizon(mdp, pi, gamma, s, mdp.horizon)
}

/// [`policy_value`] truncated to the first `horizon` steps; zero when `horizon` is 0.
pub fn policy_value_horizon(
    mdp: &TabularMDP,
    pi: &PolicyTable,
    gamma: f64,
    s: usize,
    horizon: usize,
) -> Result<f64> {
    pi.check_fits(mdp)?;
    if s >= mdp.states || horizon > mdp.horizon {
        return Err(Error::invalid(format!("state {s} or horizon {horizon} out of range")));
    }
    Ok(policy_values(mdp, pi, gamma, horizon)[s])
}

/// `sum_{t<H} gamma^t`, computed without dividing by `1 - gamma`.
pub fn effective_horizon(gamma: f64, horizon: usize) -> f64 {
    let mut total = 0.0;
    let mut g = 1.0;
    for _ in 0..horizon {
        total += g;
        g *= gamma;
    }
    total
}

/// Expected total variation between `pi_star` and `pi`, with states drawn from
/// `pi_star`'s visitation from the initial state averaged uniformly over
/// `t = 0..H-1`.
pub fn occupancy_tv(mdp: &TabularMDP, pi_star: &PolicyTable, pi: &PolicyTable) -> Result<f64> {
    weighted_occupancy_tv(mdp, pi_star, pi, 1.0)
}

/// Like [`occupancy_tv`] but timestep `t` carries weight `gamma^t`
/// (normalised), the visitation under which the policy-gap term is bounded.
/// Equals [`occupancy_tv`] at `gamma = 1`.
pub fn discounted_occupancy_tv(
    mdp: &TabularMDP,
    pi_star: &PolicyTable,
    pi: &PolicyTable,
    gamma: f64,
) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    weighted_occupancy_tv(mdp, pi_star, pi, gamma)
}

fn weighted_occupancy_tv(mdp: &TabularMDP, pi_star: &PolicyTable, pi: &PolicyTable, gamma: f64) -> Result<f64> {
    pi_star.check_fits(mdp)?;
    pi.check_fits(mdp)?;
    let ns = mdp.states;
    let mut d = vec![0.0; ns];
    d[mdp.initial_state] = 1.0;
    let mut total = 0.0;
    let mut weight = 1.0;
    for t in 0..mdp.horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if d[s] == 0.0 {
                continue;
            }
            let (a_star, a_pi) = (pi_star.row(t, s), pi.row(t, s));
            let tv: f64 = 0.5 * a_star.iter().zip(a_pi).map(|(x, y)| (x - y).abs()).sum::<f64>();
            total += weight * d[s] * tv;
            for (a, &p) in a_star.iter().enumerate() {
                for (n, &pn) in next.iter_mut().zip(mdp.transition(s, a)) {
                    *n += d[s] * p * pn;
                }
            }
        }
        d = next;
        weight *= gamma;
    }
    Ok((total / effective_horizon(gamma, mdp.horizon)).clamp(0.0, 1.0))
}

/// Discount-mismatch decomposition and bound for one `(pi*, pi, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuboptimalityReport {
    pub gamma: f64,
    /// Evaluation discount; always 1.
    pub gamma_e: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub subopt: f64,
    pub bound_term1: f64,
    pub bound_term2: f64,
    pub bound_total: f64,
    pub tv_expectation: f64,
    /// TV under the `gamma`-discounted visitation; see [`discounted_occupancy_tv`].
    pub tv_discounted: f64,
}

impl SuboptimalityReport {
    pub fn holds(&self) -> bool {
        self.subopt <= self.bound_total
    }
}

/// `Delta1 = V_1^{pi*} - V_g^{pi*}`, `Delta2 = V_g^{pi*} - V_g^{pi}`,
/// `Delta3 = V_g^{pi} - V_1^{pi}`; bound fields are left at zero.
pub fn suboptimality_decompose(
    mdp: &TabularMDP,
    pi_star: &PolicyTable,
    pi: &PolicyTable,
    gamma: f64,
    s: usize,
) -> Result<SuboptimalityReport> {
    let v1_star = policy_value(mdp, pi_star, 1.0, s)?;
    let vg_star = policy_value(mdp, pi_star, gamma, s)?;
    let vg_pi = policy_value(mdp, pi, gamma, s)?;
    let v1_pi = policy_value(mdp, pi, 1.0, s)?;
    Ok(SuboptimalityReport {
        gamma,
        gamma_e: 1.0,
        delta1: v1_star - vg_star,
        delta2: vg_star - vg_pi,
        delta3: vg_pi - v1_pi,
        subopt: v1_star - v1_pi,
        bound_term1: 0.0,
        bound_term2: 0.0,
        bound_total: 0.0,
        tv_expectation: 0.0,
        tv_discounted: 0.0,
    })
}

/// `term1 = 2 (H - G) R`, `term2 = 2 G^2 tv R` with `G = sum_{t<H} gamma^t`;
/// deltas are left at zero.
pub fn suboptimality_bound(
    mdp: &TabularMDP,
    pi_star: &PolicyTable,
    pi: &PolicyTable,
    gamma: f64,
) -> Result<SuboptimalityReport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let tv = occupancy_tv(mdp, pi_star, pi)?;
    let (term1, term2) = bound_terms(mdp.horizon, mdp.reward_bound, gamma, tv);
    Ok(SuboptimalityReport {
        gamma,
        gamma_e: 1.0,
        delta1: 0.0,
        delta2: 0.0,
        delta3: 0.0,
        subopt: 0.0,
        bound_term1: term1,
        bound_term2: term2,
        bound_total: term1 + term2,
        tv_expectation: tv,
        tv_discounted: discounted_occupancy_tv(mdp, pi_star, pi, gamma)?,
    })
}

/// The two bound terms for a given horizon, reward bound, discount and TV.
pub fn bound_terms(horizon: usize, reward_bound: f64, gamma: f64, tv: f64) -> (f64, f64) {
    let g = effective_horizon(gamma, horizon);
    let h = horizon as f64;
    (2.0 * (h - g).max(0.0) * reward_bound, 2.0 * g * g * tv * reward_bound)
}

/// Decomposition and bound together, evaluated from the initial state.
pub fn suboptimality_report(
    mdp: &TabularMDP,
    pi_star: &PolicyTable,
    pi: &PolicyTable,
    gamma: f64,
) -> Result<SuboptimalityReport> {
    let d = suboptimality_decompose(mdp, pi_star, pi, gamma, mdp.initial_state)?;
    let b = suboptimality_bound(mdp, pi_star, pi, gamma)?;
    Ok(SuboptimalityReport {
        bound_term1: b.bound_term1,
        bound_term2: b.bound_term2,
        bound_total: b.bound_total,
        tv_expectation: b.tv_expectation,
        tv_discounted: b.tv_discounted,
        ..d
    })
}

fn dirichlet_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    // push the rounding residue onto the largest entry so rows sum to 1 tightly
    let err = 1.0 - row.iter().sum::<f64>();
    let imax = (0..n).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
    row[imax] += err;
    row
}

fn random_rewards(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn check_shape(states: usize, actions: usize, horizon: usize, reward_bound: f64) -> Result<()> {
    if states == 0 || actions == 0 || horizon == 0 || !(reward_bound > 0.0) {
        return Err(Error::invalid(format!(
            "random MDP needs S, A, H >= 1 and R > 0 (got {states}, {actions}, {horizon}, {reward_bound})"
        )));
    }
    Ok(())
}

/// Transitions from a flat Dirichlet, rewards uniform on `[-R, R]`, start state 0.
pub fn random_mdp(states: usize, actions: usize, horizon: usize, reward_bound: f64, seed_val: u64) -> Result<TabularMDP> {
    check_shape(states, actions, horizon, reward_bound)?;
    let mut rng = seed::substream_rng(seed_val, "mdp", 0);
    let transitions = (0..states * actions).flat_map(|_| dirichlet_row(&mut rng, states)).collect();
    let rewards = random_rewards(&mut rng, states * actions, reward_bound);
    TabularMDP::new(states, actions, horizon, reward_bound, 0, transitions, rewards)
}

/// Like [`random_mdp`] but every `(s, a)` moves to one uniformly chosen state.
pub fn random_deterministic_mdp(
    states: usize,
    actions: usize,
    horizon: usize,
    reward_bound: f64,
    seed_val: u64,
) -> Result<TabularMDP> {
    check_shape(states, actions, horizon, reward_bound)?;
    let mut rng = seed::substream_rng(seed_val, "mdp-deterministic", 0);
    let mut transitions = vec![0.0; states * actions * states];
    for row in transitions.chunks_mut(states) {
        row[rng.random_range(0..states)] = 1.0;
    }
    let rewards = random_rewards(&mut rng, states * actions, reward_bound);
    TabularMDP::new(states, actions, horizon, reward_bound, 0, transitions, rewards)
}

/// A stationary reference policy with flat-Dirichlet rows, strictly positive.
pub fn random_policy(horizon: usize, states: usize, actions: usize, seed_val: u64) -> Result<PolicyTable> {
    let mut rng = seed::substream_rng(seed_val, "policy", 0);
    let rows: Vec<Vec<f64>> = (0..states)
        .map(|_| {
            let mut row = dirichlet_row(&mut rng, actions);
            // keep log pi_ref finite
            if row.iter().any(|&p| p <= 1e-12) {
                row = vec![1.0 / actions as f64; actions];
            }
            row
        })
        .collect();
    PolicyTable::stationary(horizon, &rows)
}

/// Instance family and regularisation for bound sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepConfig {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    pub reward_bound: f64,
    pub beta: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            max_states: 5,
            max_actions: 5,
            max_horizon: 10,
            reward_bound: 1.0,
            beta: 0.1,
        }
    }
}

/// One random instance of the sweep family: the MDP and a reference policy.
pub fn sweep_instance(cfg: &SweepConfig, seed_val: u64) -> Result<(TabularMDP, PolicyTable)> {
    let mut rng = seed::substream_rng(seed_val, "sweep-shape", 0);
    let s = rng.random_range(1..=cfg.max_states.max(1));
    let a = rng.random_range(1..=cfg.max_actions.max(1));
    let h = rng.random_range(1..=cfg.max_horizon.max(1));
    let mdp = random_mdp(s, a, h, cfg.reward_bound, seed_val)?;
    let pi_ref = random_policy(h, s, a, seed_val)?;
    Ok((mdp, pi_ref))
}

/// One `(seed, gamma)` row of a bound sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub report: SuboptimalityReport,
}

/// For each seed, `pi*` is soft-optimal at discount 1 and `pi` soft-optimal at
/// each `gamma`; both share `beta` and the reference policy. Rows come back
/// ordered by seed, then by the order of `gammas`.
pub fn bound_sweep(cfg: &SweepConfig, seeds: &[u64], gammas: &[f64]) -> Result<Vec<SweepRow>> {
    let per_seed: Vec<Result<Vec<SweepRow>>> = seeds
        .par_iter()
        .map(|&sd| {
            let (mdp, pi_ref) = sweep_instance(cfg, sd)?;
            let (_, pi_star) = soft_value_iteration(&mdp, &pi_ref, cfg.beta, 1.0)?;
            gammas
                .iter()
                .map(|&g| {
                    let (_, pi) = soft_value_iteration(&mdp, &pi_ref, cfg.beta, g)?;
                    Ok(SweepRow {
                        seed: sd,
                        states: mdp.states,
                        actions: mdp.actions,
                        horizon: mdp.horizon,
                        report: suboptimality_report(&mdp, &pi_star, &pi, g)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}
