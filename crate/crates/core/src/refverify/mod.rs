//! Reference verifier: interval bound propagation, input-splitting
//! branch-and-bound and a projected-gradient falsifier.
//!
//! The attack runs first. Disjuncts it cannot satisfy are bounded with IBP;
//! inconclusive boxes are split along their widest input dimension until
//! every piece is refuted, a point inside a piece satisfies the query, or a
//! budget runs out.

mod attack;
mod ibp;

use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::netio::NetworkGraph;
use crate::speclang::{AdversarialQuery, Disjunct, InputBox};
use crate::witness::{validate, Tolerance, Witness};

use attack::{check_point, descend, finite_box, random_point, Schedule};
pub use ibp::{decide_disjunct_unsat, ibp_bounds, IntervalVector};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub enabled: bool,
    pub steps: usize,
    pub restarts: usize,
    /// Initial step as a fraction of each box width.
    pub step_fraction: f64,
    pub decay: f64,
    pub decay_every: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            enabled: true,
            steps: 30,
            restarts: 5,
            step_fraction: 0.25,
            decay: 0.8,
            decay_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BabConfig {
    pub max_depth: usize,
    pub max_subproblems: u64,
    /// Descent steps tried from the centre of every unrefuted box.
    pub node_attack_steps: usize,
}

impl Default for BabConfig {
    fn default() -> Self {
        BabConfig {
            max_depth: 20,
            max_subproblems: 10_000,
            node_attack_steps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierConfig {
    pub attack: AttackConfig,
    pub bab: BabConfig,
    pub time_budget: Duration,
    pub seed: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            attack: AttackConfig::default(),
            bab: BabConfig::default(),
            time_budget: Duration::from_secs(60),
            seed: 0,
        }
    }
}

impl VerifierConfig {
    pub fn with_seed(seed: u64) -> Self {
        VerifierConfig {
            seed,
            ..Self::default()
        }
    }

    fn schedule(&self, steps: usize) -> Schedule {
        Schedule {
            steps,
            step_fraction: self.attack.step_fraction,
            decay: self.attack.decay,
            decay_every: self.attack.decay_every.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyStatus {
    Sat,
    Unsat,
    Unknown,
}

impl VerifyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerifyStatus::Sat => "sat",
            VerifyStatus::Unsat => "unsat",
            VerifyStatus::Unknown => "unknown",
        }
    }
}

impl fmt::Display for VerifyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyStats {
    pub subproblems: u64,
    pub attack_iterations: u64,
    pub max_depth_reached: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub status: VerifyStatus,
    pub witness: Option<Witness>,
    pub stats: VerifyStats,
    /// Why the result is `Unknown`, when it is.
    pub reason: Option<String>,
}

/// Accepts a candidate only if it passes witness validation at default
/// tolerances.
fn confirmed(net: &NetworkGraph, query: &AdversarialQuery, x: Vec<f64>, y: Vec<f64>) -> Option<Witness> {
    let w = Witness::with_outputs(x, y);
    match validate(&w, query, net, Tolerance::default()) {
        Ok(r) if r.is_valid() => Some(w),
        _ => None,
    }
}

fn attack_disjunct(
    net: &NetworkGraph,
    query: &AdversarialQuery,
    d: &Disjunct,
    config: &VerifierConfig,
    rng: &mut ChaCha8Rng,
    iterations: &mut u64,
) -> Option<Witness> {
    if d.input_box.is_empty() {
        return None;
    }
    let schedule = config.schedule(config.attack.steps);
    for restart in 0..config.attack.restarts.max(1) {
        let start = if restart == 0 {
            finite_box(&d.input_box).center()
        } else {
            random_point(&d.input_box, rng)
        };
        if let Some((x, y)) = descend(net, d, &d.input_box, start, &schedule, iterations) {
            if let Some(w) = confirmed(net, query, x, y) {
                return Some(w);
            }
        }
    }
    None
}

fn run_attack(
    net: &NetworkGraph,
    query: &AdversarialQuery,
    config: &VerifierConfig,
    rng: &mut ChaCha8Rng,
    iterations: &mut u64,
) -> Option<Witness> {
    query
        .disjuncts()
        .iter()
        .find_map(|d| attack_disjunct(net, query, d, config, rng, iterations))
}

/// Searches for a counterexample with the configured PGD schedule. A
/// returned witness always validates; `None` proves nothing.
pub fn pgd_attack(net: &NetworkGraph, query: &AdversarialQuery, config: &VerifierConfig) -> Option<Witness> {
    query.check_dimensions(net.d_in(), net.d_out()).ok()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_attack(net, query, config, &mut rng, &mut 0)
}

/// Splits `b` at the midpoint of its widest coordinate (lowest index on
/// ties). The halves share the cut plane, so their union is exactly `b`.
/// Returns `None` when the widest coordinate cannot be halved further.
pub fn split_widest(b: &InputBox) -> Option<(InputBox, InputBox)> {
    let widths = b.widths();
    let mut dim = 0;
    for (i, w) in widths.iter().enumerate() {
        if *w > widths[dim] {
            dim = i;
        }
    }
    let (l, u) = (*b.lower.get(dim)?, b.upper[dim]);
    let mid = l + 0.5 * (u - l);
    if !(l < mid && mid < u) || !mid.is_finite() {
        return None;
    }
    let mut left = b.clone();
    let mut right = b.clone();
    left.upper[dim] = mid;
    right.lower[dim] = mid;
    Some((left, right))
}

enum Search {
    Refuted,
    Open,
    Found(Witness),
    OutOfBudget,
}

struct Bab<'a> {
    net: &'a NetworkGraph,
    query: &'a AdversarialQuery,
    config: &'a VerifierConfig,
    start: Instant,
    stats: VerifyStats,
}

impl Bab<'_> {
    fn search(&mut self, d: &Disjunct) -> Search {
        if d.input_box.is_empty() {
            self.stats.subproblems += 1;
            return Search::Refuted;
        }
        let node_schedule = self.config.schedule(self.config.bab.node_attack_steps);
        let mut open = false;
        let mut stack = vec![(d.input_box.clone(), 0usize)];
        while let Some((b, depth)) = stack.pop() {
            if self.stats.subproblems >= self.config.bab.max_subproblems
                || self.start.elapsed() >= self.config.time_budget
            {
                return Search::OutOfBudget;
            }
            self.stats.subproblems += 1;
            self.stats.max_depth_reached = self.stats.max_depth_reached.max(depth);
            let Ok(bounds) = ibp_bounds(self.net, &b) else {
                return Search::Open;
            };
            if decide_disjunct_unsat(&bounds, &d.output_constraints) {
                continue;
            }
            let center = finite_box(&b).center();
            self.stats.attack_iterations += 1;
            if let Some(y) = check_point(self.net, d, &center) {
                if let Some(w) = confirmed(self.net, self.query, center.clone(), y) {
                    return Search::Found(w);
                }
            }
            if self.config.attack.enabled && self.config.bab.node_attack_steps > 0 {
                let hit = descend(
                    self.net,
                    d,
                    &b,
                    center,
                    &node_schedule,
                    &mut self.stats.attack_iterations,
                );
                if let Some(w) = hit.and_then(|(x, y)| confirmed(self.net, self.query, x, y)) {
                    return Search::Found(w);
                }
            }
            if depth >= self.config.bab.max_depth || !b.is_bounded() {
                open = true;
                continue;
            }
            match split_widest(&b) {
                Some((left, right)) => {
                    stack.push((right, depth + 1));
                    stack.push((left, depth + 1));
                }
                None => open = true,
            }
        }
        if open {
            Search::Open
        } else {
            Search::Refuted
        }
    }
}

/// Decides the query: `Sat` with a validating witness, `Unsat` when every
/// disjunct is refuted on a full partition of its box, `Unknown` otherwise.
pub fn verify(net: &NetworkGraph, query: &AdversarialQuery, config: &VerifierConfig) -> VerifyOutcome {
    let start = Instant::now();
    let mut stats = VerifyStats::default();
    let finish = |status, witness, mut stats: VerifyStats, reason: Option<String>| {
        stats.elapsed = start.elapsed();
        VerifyOutcome {
            status,
            witness,
            stats,
            reason,
        }
    };
    if let Err(e) = query.check_dimensions(net.d_in(), net.d_out()) {
        return finish(VerifyStatus::Unknown, None, stats, Some(e.to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.attack.enabled {
        if let Some(w) = run_attack(net, query, config, &mut rng, &mut stats.attack_iterations) {
            return finish(VerifyStatus::Sat, Some(w), stats, None);
        }
    }

    let mut bab = Bab {
        net,
        query,
        config,
        start,
        stats,
    };
    let mut reason = None;
    for (k, d) in query.disjuncts().iter().enumerate() {
        match bab.search(d) {
            Search::Refuted => {}
            Search::Found(w) => return finish(VerifyStatus::Sat, Some(w), bab.stats, None),
            Search::Open => {
                reason.get_or_insert_with(|| format!("disjunct {k} not refuted within depth limit"));
            }
            Search::OutOfBudget => {
                reason = Some(format!("budget exhausted in disjunct {k}"));
                break;
            }
        }
    }
    match reason {
        None => finish(VerifyStatus::Unsat, None, bab.stats, None),
        Some(r) => finish(VerifyStatus::Unknown, None, bab.stats, Some(r)),
    }
}
