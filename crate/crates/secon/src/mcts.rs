//! Monte Carlo tree search over the belief MDP with double progressive
//! widening.
//!
//! Action selection inside the tree follows the upper confidence rule
//! `Q(s,u) + c sqrt(ln N(s) / N(s,u))`, with unvisited actions taken first.
//! Both the number of actions at a state node and the number of sampled
//! child beliefs under a state-action edge are capped by
//! `ceil(k N^alpha)`, which keeps the tree deep in the continuous spaces.
//! New child beliefs come from the generative model; leaves are scored by a
//! proportional goal-seeking rollout.
//!
//! Every `plan` call builds a private tree. A filter divergence inside a
//! simulation discards that simulation's tree edits and retries, up to a
//! small cap.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::belief::BeliefMdp;
use crate::filter::{FilterError, GaussianBelief};
use crate::models::Model;

const MAX_DISCARDED_SIMULATIONS: usize = 10;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error("search diverged after {discarded} discarded simulations")]
    Diverged {
        discarded: usize,
        #[source]
        source: FilterError,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct MctsConfig {
    /// UCT exploration constant.
    pub exploration: f64,
    /// Linear widening coefficient.
    pub dpw_k: f64,
    /// Widening exponent.
    pub dpw_alpha: f64,
    /// Maximum simulation depth in steps.
    pub depth: usize,
    /// Simulations per plan call.
    pub iterations: usize,
    /// Gain of the proportional rollout controller.
    pub rollout_gain: f64,
    /// Discount factor in (0, 1].
    pub discount: f64,
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.exploration < 0.0 {
            return Err(format!("exploration must be nonnegative, got {}", self.exploration));
        }
        if self.dpw_k <= 0.0 {
            return Err(format!("dpw_k must be positive, got {}", self.dpw_k));
        }
        if !(0.0 < self.dpw_alpha && self.dpw_alpha < 1.0) {
            return Err(format!("dpw_alpha must lie in (0, 1), got {}", self.dpw_alpha));
        }
        if self.depth == 0 {
            return Err("depth must be at least 1".into());
        }
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if !(0.0 < self.discount && self.discount <= 1.0) {
            return Err(format!("discount must lie in (0, 1], got {}", self.discount));
        }
        Ok(())
    }
}

fn dpw_limit(k: f64, alpha: f64, count: u32) -> usize {
    (k * (count as f64).powf(alpha)).ceil() as usize
}

fn mix_seed(seed: u64, depth: usize, ordinal: usize) -> u64 {
    let mut z = seed ^ (depth as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (ordinal as u64).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Widening candidate used inside the tree: the k-th expansion at any node
/// of a given depth draws the same uniform control. Sharing candidate sets
/// across sibling subtrees cancels their sampling noise when value
/// estimates are compared, which is what makes fine near-goal control
/// selectable; the marginal distribution stays uniform over the box.
fn widened_action<M: Model + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    config: &MctsConfig,
    widen_seed: u64,
    depth: usize,
    ordinal: usize,
) -> DVector<f64> {
    if ordinal == 0 {
        return model.proportional_action(&belief.mean, config.rollout_gain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(widen_seed, depth, ordinal));
    let bound = model.u_max();
    DVector::from_fn(model.control_dim(), |_, _| rng.random_range(-bound..=bound))
}

struct StateNode {
    belief: GaussianBelief,
    visits: u32,
    edges: Vec<usize>,
}

struct ActionEdge {
    action: DVector<f64>,
    visits: u32,
    value: f64,
    children: Vec<ChildRef>,
}

struct ChildRef {
    node: usize,
    reward: f64,
    samples: u32,
}

/// The search tree of one `plan` call, retained for audits.
pub struct SearchTree {
    nodes: Vec<StateNode>,
    edges: Vec<ActionEdge>,
}

/// One line of the per-iteration search trace.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Deepest level reached, counting tree and rollout steps.
    pub depth_reached: usize,
    /// Discounted return backed up to the root.
    pub value: f64,
    /// Ordinal of the chosen root action (expansion order).
    pub root_action: usize,
}

pub struct PlanOutcome {
    pub action: DVector<f64>,
    pub tree: SearchTree,
    pub trace: Vec<IterationRecord>,
    /// Simulations discarded after filter divergences.
    pub discarded: usize,
}

impl SearchTree {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn root_visits(&self) -> u32 {
        self.nodes[0].visits
    }

    /// Visit count and value estimate of each root action, in expansion order.
    pub fn root_statistics(&self) -> Vec<(DVector<f64>, u32, f64)> {
        self.nodes[0]
            .edges
            .iter()
            .map(|&e| {
                let edge = &self.edges[e];
                (edge.action.clone(), edge.visits, edge.value)
            })
            .collect()
    }

    /// Verifies both widening bounds and the visit-count bookkeeping on
    /// every node and edge.
    pub fn audit(&self, config: &MctsConfig) -> Result<(), String> {
        for (id, node) in self.nodes.iter().enumerate() {
            let limit = dpw_limit(config.dpw_k, config.dpw_alpha, node.visits);
            if node.edges.len() > limit {
                return Err(format!(
                    "node {id}: {} actions exceed ceil(k N^alpha) = {limit} at N = {}",
                    node.edges.len(),
                    node.visits
                ));
            }
            let edge_visits: u32 = node.edges.iter().map(|&e| self.edges[e].visits).sum();
            if edge_visits != node.visits {
                return Err(format!(
                    "node {id}: visit count {} != action visit sum {edge_visits}",
                    node.visits
                ));
            }
        }
        for (id, edge) in self.edges.iter().enumerate() {
            let limit = dpw_limit(config.dpw_k, config.dpw_alpha, edge.visits);
            if edge.children.len() > limit {
                return Err(format!(
                    "edge {id}: {} children exceed ceil(k N^alpha) = {limit} at N = {}",
                    edge.children.len(),
                    edge.visits
                ));
            }
            let samples: u32 = edge.children.iter().map(|c| c.samples).sum();
            if samples != edge.visits {
                return Err(format!(
                    "edge {id}: visit count {} != child sample sum {samples}",
                    edge.visits
                ));
            }
        }
        Ok(())
    }

    /// Writes the iteration trace as CSV with the chosen root action values.
    pub fn write_trace_csv<W: std::io::Write>(
        &self,
        trace: &[IterationRecord],
        w: &mut W,
    ) -> std::io::Result<()> {
        let control_dim = self
            .nodes[0]
            .edges
            .first()
            .map_or(0, |&e| self.edges[e].action.len());
        let headers: Vec<String> =
            (0..control_dim).map(|i| format!("action_{i}")).collect();
        writeln!(w, "iteration,depth_reached,return,{}", headers.join(","))?;
        for rec in trace {
            let edge = self.edges[self.nodes[0].edges[rec.root_action]].action.clone();
            let values: Vec<String> = edge.iter().map(|v| v.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{}",
                rec.iteration,
                rec.depth_reached,
                rec.value,
                values.join(",")
            )?;
        }
        Ok(())
    }
}

enum TreeOp {
    EdgeAdded { node: usize },
    ChildAdded { edge: usize },
    SampleBumped { edge: usize, child: usize },
}

fn rollback(tree: &mut SearchTree, journal: Vec<TreeOp>) {
    for op in journal.into_iter().rev() {
        match op {
            TreeOp::EdgeAdded { node } => {
                tree.nodes[node].edges.pop();
                tree.edges.pop();
            }
            TreeOp::ChildAdded { edge } => {
                tree.edges[edge].children.pop();
                tree.nodes.pop();
            }
            TreeOp::SampleBumped { edge, child } => {
                tree.edges[edge].children[child].samples -= 1;
            }
        }
    }
}

/// Stand-alone widening proposal: the first expansion at a node is the
/// rollout-policy action for its belief, later ones are uniform over the
/// control box. Inside `plan` the uniform draws additionally share a stream
/// across sibling nodes (see `widened_action`); this form keeps the plain
/// per-call sampling contract.
pub fn sample_action<M: Model + ?Sized, R: Rng + ?Sized>(
    existing_actions: usize,
    belief: &GaussianBelief,
    model: &M,
    config: &MctsConfig,
    rng: &mut R,
) -> DVector<f64> {
    if existing_actions == 0 {
        model.proportional_action(&belief.mean, config.rollout_gain)
    } else {
        let bound = model.u_max();
        DVector::from_fn(model.control_dim(), |_, _| rng.random_range(-bound..=bound))
    }
}

/// Discounted return of the proportional controller simulated through the
/// generative model for `remaining_depth` steps.
pub fn rollout<M: Model, R: Rng + ?Sized>(
    mdp: &BeliefMdp<M>,
    belief: &GaussianBelief,
    config: &MctsConfig,
    rng: &mut R,
    remaining_depth: usize,
) -> Result<f64, FilterError> {
    let mut total = 0.0;
    let mut discount = 1.0;
    let mut current = belief.clone();
    for _ in 0..remaining_depth {
        let u = mdp.model.proportional_action(&current.mean, config.rollout_gain);
        let tr = mdp.generate(&current, &u, rng)?;
        total += discount * tr.reward;
        discount *= config.discount;
        current = tr.next_belief;
    }
    Ok(total)
}

fn select_edge(tree: &SearchTree, node_id: usize, exploration: f64) -> usize {
    let node = &tree.nodes[node_id];
    for &e in &node.edges {
        if tree.edges[e].visits == 0 {
            return e;
        }
    }
    let ln_n = (node.visits.max(1) as f64).ln();
    let mut best = node.edges[0];
    let mut best_score = f64::NEG_INFINITY;
    for &e in &node.edges {
        let edge = &tree.edges[e];
        let score = edge.value + exploration * (ln_n / edge.visits as f64).sqrt();
        if score > best_score {
            best_score = score;
            best = e;
        }
    }
    best
}

fn sample_child<R: Rng + ?Sized>(children: &[ChildRef], rng: &mut R) -> usize {
    let total: u32 = children.iter().map(|c| c.samples).sum();
    let mut pick = rng.random_range(0..total);
    for (i, child) in children.iter().enumerate() {
        if pick < child.samples {
            return i;
        }
        pick -= child.samples;
    }
    children.len() - 1
}

struct SimContext {
    depth_reached: usize,
    root_action: usize,
    widen_seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn simulate<M: Model, R: Rng + ?Sized>(
    tree: &mut SearchTree,
    node_id: usize,
    depth_left: usize,
    mdp: &BeliefMdp<M>,
    config: &MctsConfig,
    rng: &mut R,
    journal: &mut Vec<TreeOp>,
    ctx: &mut SimContext,
) -> Result<f64, FilterError> {
    if depth_left == 0 {
        return Ok(0.0);
    }
    ctx.depth_reached = ctx.depth_reached.max(config.depth - depth_left + 1);

    // Action widening.
    let visits = tree.nodes[node_id].visits;
    if tree.nodes[node_id].edges.len() < dpw_limit(config.dpw_k, config.dpw_alpha, visits + 1) {
        let action = widened_action(
            mdp.model,
            &tree.nodes[node_id].belief,
            config,
            ctx.widen_seed,
            config.depth - depth_left,
            tree.nodes[node_id].edges.len(),
        );
        let edge_id = tree.edges.len();
        tree.edges.push(ActionEdge { action, visits: 0, value: 0.0, children: Vec::new() });
        tree.nodes[node_id].edges.push(edge_id);
        journal.push(TreeOp::EdgeAdded { node: node_id });
    }

    let edge_id = select_edge(tree, node_id, config.exploration);
    if depth_left == config.depth {
        ctx.root_action = tree.nodes[node_id]
            .edges
            .iter()
            .position(|&e| e == edge_id)
            .expect("selected edge belongs to the root");
    }

    // State widening on the chosen edge.
    let edge_visits = tree.edges[edge_id].visits;
    let widen =
        tree.edges[edge_id].children.len() < dpw_limit(config.dpw_k, config.dpw_alpha, edge_visits + 1);
    let (reward, child_node, is_new) = if widen {
        let tr = mdp.generate(&tree.nodes[node_id].belief, &tree.edges[edge_id].action, rng)?;
        // A bit-identical sampled belief (deterministic transitions) reuses
        // its node so the search deepens instead of duplicating subtrees.
        let repeat = tree.edges[edge_id]
            .children
            .iter()
            .position(|c| tree.nodes[c.node].belief.bits_eq(&tr.next_belief));
        if let Some(idx) = repeat {
            tree.edges[edge_id].children[idx].samples += 1;
            journal.push(TreeOp::SampleBumped { edge: edge_id, child: idx });
            let child = &tree.edges[edge_id].children[idx];
            (child.reward, child.node, false)
        } else {
            let child_id = tree.nodes.len();
            tree.nodes.push(StateNode { belief: tr.next_belief, visits: 0, edges: Vec::new() });
            tree.edges[edge_id]
                .children
                .push(ChildRef { node: child_id, reward: tr.reward, samples: 1 });
            journal.push(TreeOp::ChildAdded { edge: edge_id });
            (tr.reward, child_id, true)
        }
    } else {
        let idx = sample_child(&tree.edges[edge_id].children, rng);
        tree.edges[edge_id].children[idx].samples += 1;
        journal.push(TreeOp::SampleBumped { edge: edge_id, child: idx });
        let child = &tree.edges[edge_id].children[idx];
        (child.reward, child.node, false)
    };

    let future = if is_new {
        ctx.depth_reached = ctx.depth_reached.max(config.depth - depth_left + 1);
        let leaf_belief = tree.nodes[child_node].belief.clone();
        rollout(mdp, &leaf_belief, config, rng, depth_left - 1)?
    } else {
        simulate(tree, child_node, depth_left - 1, mdp, config, rng, journal, ctx)?
    };

    let value = reward + config.discount * future;
    tree.nodes[node_id].visits += 1;
    let edge = &mut tree.edges[edge_id];
    edge.visits += 1;
    edge.value += (value - edge.value) / edge.visits as f64;
    Ok(value)
}

/// Runs the configured number of simulations from the given belief and
/// returns the root action with the best value estimate (ties broken by
/// higher visit count, then expansion order).
pub fn plan<M: Model, R: Rng + ?Sized>(
    mdp: &BeliefMdp<M>,
    belief: &GaussianBelief,
    config: &MctsConfig,
    rng: &mut R,
) -> Result<PlanOutcome, PlanError> {
    config.validate().map_err(PlanError::InvalidConfig)?;
    let mut tree = SearchTree {
        nodes: vec![StateNode { belief: belief.clone(), visits: 0, edges: Vec::new() }],
        edges: Vec::new(),
    };
    let mut trace = Vec::with_capacity(config.iterations);
    let mut discarded = 0usize;
    let widen_seed: u64 = rng.random();
    for iteration in 0..config.iterations {
        loop {
            let mut journal = Vec::new();
            let mut ctx = SimContext { depth_reached: 0, root_action: 0, widen_seed };
            match simulate(&mut tree, 0, config.depth, mdp, config, rng, &mut journal, &mut ctx) {
                Ok(value) => {
                    trace.push(IterationRecord {
                        iteration,
                        depth_reached: ctx.depth_reached,
                        value,
                        root_action: ctx.root_action,
                    });
                    break;
                }
                Err(source) => {
                    rollback(&mut tree, journal);
                    discarded += 1;
                    if discarded > MAX_DISCARDED_SIMULATIONS {
                        return Err(PlanError::Diverged { discarded, source });
                    }
                }
            }
        }
    }

    let root_edges = &tree.nodes[0].edges;
    let mut best = root_edges[0];
    for &e in &root_edges[1..] {
        let (candidate, current) = (&tree.edges[e], &tree.edges[best]);
        if candidate.value > current.value
            || (candidate.value == current.value && candidate.visits > current.visits)
        {
            best = e;
        }
    }
    Ok(PlanOutcome { action: tree.edges[best].action.clone(), tree, trace, discarded })
}
