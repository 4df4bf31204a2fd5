//! The three benchmark environments: a tabular ergodic chain, DeepSea and
//! CartPole, all run as continuing (never-ending) tasks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::eval::FeatureMap;
use crate::mdp::TabularMdp;

/// What an agent sees of the environment state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Observation {
    /// Tabular state index.
    Index(usize),
    /// DeepSea grid cell.
    Cell { row: usize, col: usize },
    /// CartPole `[position, velocity, angle, angular velocity]`.
    Physical([f64; 4]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Tabular,
    DeepSea,
    CartPole,
}

impl std::str::FromStr for EnvKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(Self::Tabular),
            "deepsea" => Ok(Self::DeepSea),
            "cartpole" => Ok(Self::CartPole),
            other => Err(invalid(format!("unknown environment `{other}`"))),
        }
    }
}

/// Environment name plus size parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// `|X|` for the tabular chain, `N` for DeepSea, unused for CartPole.
    pub size: usize,
    /// `|A|` for the tabular chain; the other environments have two actions.
    #[serde(default = "default_actions")]
    pub actions: usize,
}

fn default_actions() -> usize {
    2
}

impl EnvSpec {
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        Self {
            kind: EnvKind::Tabular,
            size: n_states,
            actions: n_actions,
        }
    }

    pub fn deepsea(n: usize) -> Self {
        Self {
            kind: EnvKind::DeepSea,
            size: n,
            actions: 2,
        }
    }

    pub fn cartpole() -> Self {
        Self {
            kind: EnvKind::CartPole,
            size: 0,
            actions: 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Tabular ergodic chain
// ---------------------------------------------------------------------------

/// Ergodic chain with a single rewarding state.
///
/// State 0 pays 1 and jumps uniformly to one of the other states. In any
/// other state `x`, action [`TabularErgodic::DESIGNATED`] moves to `x − 1`
/// with probability 0.9 and to a uniformly random state otherwise; every
/// other action moves to a uniformly random state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularErgodic {
    n_states: usize,
    n_actions: usize,
}

impl TabularErgodic {
    pub const GOAL: usize = 0;
    pub const DESIGNATED: usize = 1;
    pub const ADVANCE_PROB: f64 = 0.9;

    pub fn new(n_states: usize, n_actions: usize) -> Result<Self> {
        if n_states < 2 || n_actions < 2 {
            return Err(invalid("the tabular chain needs at least two states and two actions"));
        }
        Ok(Self {
            n_states,
            n_actions,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reward(&self, x: usize) -> f64 {
        if x == Self::GOAL {
            1.0
        } else {
            0.0
        }
    }

    /// Samples `(x', r)` from state `x` under action `a`.
    pub fn step<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> Result<(usize, f64)> {
        if x >= self.n_states || a >= self.n_actions {
            return Err(invalid(format!("({x}, {a}) outside the tabular chain")));
        }
        let r = self.reward(x);
        let next = if x == Self::GOAL {
            rng.random_range(1..self.n_states)
        } else if a == Self::DESIGNATED && rng.random::<f64>() < Self::ADVANCE_PROB {
            x - 1
        } else {
            rng.random_range(0..self.n_states)
        };
        Ok((next, r))
    }

    /// The exact kernel and reward table.
    pub fn model(&self) -> TabularMdp {
        let (n, m) = (self.n_states, self.n_actions);
        let mut transition = vec![0.0; n * m * n];
        let mut reward = vec![0.0; n * m];
        for x in 0..n {
            for a in 0..m {
                let row = &mut transition[(x * m + a) * n..(x * m + a + 1) * n];
                if x == Self::GOAL {
                    for (y, p) in row.iter_mut().enumerate() {
                        *p = if y == Self::GOAL { 0.0 } else { 1.0 / (n - 1) as f64 };
                    }
                } else {
                    let jump = if a == Self::DESIGNATED {
                        1.0 - Self::ADVANCE_PROB
                    } else {
                        1.0
                    };
                    row.iter_mut().for_each(|p| *p = jump / n as f64);
                    if a == Self::DESIGNATED {
                        row[x - 1] += Self::ADVANCE_PROB;
                    }
                }
                reward[x * m + a] = self.reward(x);
            }
        }
        TabularMdp::new(n, m, transition, reward).expect("analytic kernel is stochastic")
    }
}

// ---------------------------------------------------------------------------
// DeepSea
// ---------------------------------------------------------------------------

/// Continuing DeepSea on an `N × N` grid.
///
/// Every step moves one row down (wrapping). Action 0 moves left, action 1
/// moves right, both clamped at the walls. Action 1 costs 1 everywhere and
/// the bottom-right cell pays `2N`, so always playing 1 averages exactly 1
/// and never playing it averages 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepSea {
    n: usize,
}

impl DeepSea {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("DeepSea needs N >= 2"));
        }
        Ok(Self { n })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn goal(&self) -> (usize, usize) {
        (self.n - 1, self.n - 1)
    }

    /// Deterministic transition from `cell` under `a`.
    pub fn step(&self, cell: (usize, usize), a: usize) -> Result<((usize, usize), f64)> {
        let (i, j) = cell;
        let n = self.n;
        if i >= n || j >= n || a > 1 {
            return Err(invalid(format!("({i}, {j}) with action {a} outside the {n}x{n} grid")));
        }
        let row = (i + 1) % n;
        let col = if a == 0 { j.saturating_sub(1) } else { (j + 1).min(n - 1) };
        let mut reward = if a == 1 { -1.0 } else { 0.0 };
        if cell == self.goal() {
            reward += 2.0 * n as f64;
        }
        Ok(((row, col), reward))
    }

    /// The cheapest periodic strategy that collects the goal on every pass:
    /// reach the bottom-right cell with the fewest action-1 steps, using the
    /// left wall for free when the slack is odd.
    pub fn alternating_action(&self, cell: (usize, usize)) -> usize {
        let (i, j) = cell;
        let n = self.n;
        if i == n - 1 {
            return 0;
        }
        let steps = n - 1 - i;
        let deficit = n - 1 - j;
        if deficit >= steps {
            1
        } else if (steps - deficit) % 2 == 0 || j == 0 {
            0
        } else {
            1
        }
    }
}

// ---------------------------------------------------------------------------
// CartPole
// ---------------------------------------------------------------------------

/// CartPole with classical constants and explicit Euler integration.
///
/// A step emits +1 while the pole stays up. When the episode ends after
/// `h` steps (angle beyond 15°, cart beyond 2.4, or `h = 200`) the step
/// emits `h − 200` and the state is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CartPole {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub force: f64,
    pub dt: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    pub max_steps: usize,
    pub init_range: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            dt: 0.02,
            angle_limit: 15.0_f64.to_radians(),
            position_limit: 2.4,
            max_steps: 200,
            init_range: 0.05,
        }
    }
}

/// Physical state plus the number of steps taken in the current episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CartPoleState {
    pub phys: [f64; 4],
    pub h: usize,
}

impl CartPole {
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> CartPoleState {
        let r = self.init_range;
        let mut phys = [0.0; 4];
        for v in &mut phys {
            *v = rng.random_range(-r..=r);
        }
        CartPoleState { phys, h: 0 }
    }

    /// One Euler step of the dynamics, without termination logic.
    pub fn integrate(&self, phys: [f64; 4], a: usize) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = phys;
        let force = if a == 1 { self.force } else { -self.force };
        let total_mass = self.cart_mass + self.pole_mass;
        let pm_len = self.pole_mass * self.half_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pm_len * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pm_len * theta_acc * cos / total_mass;
        [
            x + self.dt * x_dot,
            x_dot + self.dt * x_acc,
            theta + self.dt * theta_dot,
            theta_dot + self.dt * theta_acc,
        ]
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &CartPoleState,
        a: usize,
        rng: &mut R,
    ) -> Result<(CartPoleState, f64)> {
        if a > 1 {
            return Err(invalid(format!("CartPole has two actions, got {a}")));
        }
        let phys = self.integrate(state.phys, a);
        let h = state.h + 1;
        let failed = phys[2].abs() > self.angle_limit || phys[0].abs() > self.position_limit;
        if failed || h >= self.max_steps {
            Ok((self.reset(rng), h as f64 - self.max_steps as f64))
        } else {
            Ok((CartPoleState { phys, h }, 1.0))
        }
    }
}

// ---------------------------------------------------------------------------
// Stateful wrapper
// ---------------------------------------------------------------------------

/// A running environment instance.
#[derive(Debug, Clone)]
pub enum Env {
    Tabular { env: TabularErgodic, x: usize },
    DeepSea { env: DeepSea, cell: (usize, usize) },
    CartPole { env: CartPole, state: CartPoleState },
}

impl Env {
    /// Builds the environment and draws its initial state.
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec.kind {
            EnvKind::Tabular => {
                let env = TabularErgodic::new(spec.size, spec.actions)?;
                let x = rng.random_range(0..env.n_states());
                Env::Tabular { env, x }
            }
            EnvKind::DeepSea => Env::DeepSea {
                env: DeepSea::new(spec.size)?,
                cell: (0, 0),
            },
            EnvKind::CartPole => {
                let env = CartPole::default();
                let state = env.reset(rng);
                Env::CartPole { env, state }
            }
        })
    }

    pub fn observe(&self) -> Observation {
        match self {
            Env::Tabular { x, .. } => Observation::Index(*x),
            Env::DeepSea { cell, .. } => Observation::Cell {
                row: cell.0,
                col: cell.1,
            },
            Env::CartPole { state, .. } => Observation::Physical(state.phys),
        }
    }

    /// Applies `a`, advances the state and returns the reward.
    pub fn step<R: Rng + ?Sized>(&mut self, a: usize, rng: &mut R) -> Result<f64> {
        match self {
            Env::Tabular { env, x } => {
                let (next, r) = env.step(*x, a, rng)?;
                *x = next;
                Ok(r)
            }
            Env::DeepSea { env, cell } => {
                let (next, r) = env.step(*cell, a)?;
                *cell = next;
                Ok(r)
            }
            Env::CartPole { env, state } => {
                let (next, r) = env.step(state, a, rng)?;
                *state = next;
                Ok(r)
            }
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Env::Tabular { env, .. } => env.n_actions(),
            _ => 2,
        }
    }

    /// Declared reward range.
    pub fn reward_range(&self) -> (f64, f64) {
        match self {
            Env::Tabular { .. } => (0.0, 1.0),
            Env::DeepSea { env, .. } => (-1.0, 2.0 * env.size() as f64),
            Env::CartPole { env, .. } => (1.0 - env.max_steps as f64, 1.0),
        }
    }

    /// Feature map used by the learners for this environment.
    pub fn feature_map(&self) -> FeatureMap {
        match self {
            Env::Tabular { env, .. } => FeatureMap::Tabular {
                n_states: env.n_states(),
                n_actions: env.n_actions(),
            },
            Env::DeepSea { env, .. } => FeatureMap::DeepSea { n: env.size() },
            Env::CartPole { .. } => FeatureMap::cartpole_default(),
        }
    }

    /// Number of states when the state space is finite.
    pub fn n_states(&self) -> Option<usize> {
        match self {
            Env::Tabular { env, .. } => Some(env.n_states()),
            Env::DeepSea { env, .. } => Some(env.size() * env.size()),
            Env::CartPole { .. } => None,
        }
    }

    /// Exact model, available for the tabular chain only.
    pub fn tabular_model(&self) -> Option<TabularMdp> {
        match self {
            Env::Tabular { env, .. } => Some(env.model()),
            _ => None,
        }
    }
}

impl Observation {
    /// Dense index of a finite observation (`row · N + col` for cells).
    pub fn index(&self, width: usize) -> Option<usize> {
        match *self {
            Observation::Index(x) => Some(x),
            Observation::Cell { row, col } => Some(row * width + col),
            Observation::Physical(_) => None,
        }
    }
}
