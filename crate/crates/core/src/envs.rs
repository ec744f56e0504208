//! Analytic environments with verified finite-group symmetry.
//!
//! Dynamics are deterministic and defined directly on feature states, so the
//! equivariance identities `P(g·s' | g·s, g·a) = P(s' | s, a)` and
//! `R(g·s, g·a) = R(s, a)` hold per algebraic step rather than only in
//! expectation. Translation symmetry is absorbed by goal-relative
//! coordinates throughout; the groups stay finite matrix groups.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::group::{rep_direct_sum, rep_sign, rep_standard, GroupSpec, Rep};

/// Feasible action set, symmetric about the origin. The box form is only
/// used with groups that permute and flip axes; general rotation groups get
/// the Euclidean ball so the clipped set stays closed under the group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionBounds {
    Box { half: f64 },
    Ball { radius: f64 },
}

impl ActionBounds {
    /// Chooses box clamping when the action representation maps the unit box
    /// onto itself, otherwise the norm ball.
    pub fn for_rep(rep_action: &Rep, half: f64) -> ActionBounds {
        if rep_action.is_signed_permutation() {
            ActionBounds::Box { half }
        } else {
            ActionBounds::Ball { radius: half }
        }
    }

    pub fn clip(&self, a: &mut Array1<f64>) {
        match self {
            ActionBounds::Box { half } => {
                for v in a.iter_mut() {
                    *v = v.clamp(-*half, *half);
                }
            }
            ActionBounds::Ball { radius } => {
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > *radius {
                    *a *= *radius / norm;
                }
            }
        }
    }
}

/// A rolled-out (state, action, reward) sequence: H+1 states, H actions,
/// H rewards.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Array1<f64>>,
    pub actions: Vec<Array1<f64>>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Applies a group element elementwise: every state and action is
    /// transformed, rewards are untouched.
    pub fn transformed(&self, g: usize, rep_state: &Rep, rep_action: &Rep) -> Result<Trajectory> {
        Ok(Trajectory {
            states: self.states.iter().map(|s| rep_state.act(g, s.view())).collect::<Result<_>>()?,
            actions: self.actions.iter().map(|a| rep_action.act(g, a.view())).collect::<Result<_>>()?,
            rewards: self.rewards.clone(),
        })
    }
}

/// An analytic geometric MDP: a finite group acting on feature states and
/// actions, with equivariant dynamics and invariant reward.
pub trait GeometricMdp: Send + Sync {
    fn group(&self) -> &Arc<GroupSpec>;
    fn rep_state(&self) -> &Rep;
    fn rep_action(&self) -> &Rep;
    fn transition(&self, s: ArrayView1<f64>, a: ArrayView1<f64>) -> Array1<f64>;
    fn reward(&self, s: ArrayView1<f64>, a: ArrayView1<f64>) -> f64;
    /// Invariant terminal value used as the planning horizon tail.
    fn terminal_value(&self, s: ArrayView1<f64>) -> f64;
    fn action_bounds(&self) -> ActionBounds;
    fn dt(&self) -> f64;
    fn horizon_cap(&self) -> usize;
    /// Goal predicate for episode bookkeeping.
    fn is_success(&self, s: ArrayView1<f64>) -> bool;
    /// Draws a state from a G-symmetric distribution.
    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Array1<f64>;
}

/// Deterministic rollout under a fixed action sequence.
pub fn rollout(env: &dyn GeometricMdp, s0: &Array1<f64>, actions: &[Array1<f64>]) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    let mut rewards = Vec::with_capacity(actions.len());
    states.push(s0.clone());
    for (step, a) in actions.iter().enumerate() {
        if a.len() != env.rep_action().dim {
            return Err(Error::DimensionMismatch { expected: env.rep_action().dim, got: a.len() });
        }
        let s = states.last().unwrap();
        rewards.push(env.reward(s.view(), a.view()));
        let next = env.transition(s.view(), a.view());
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure { step, what: "non-finite state in rollout".into() });
        }
        states.push(next);
    }
    Ok(Trajectory { states, actions: actions.to_vec(), rewards })
}

/// Checks the dynamics/reward symmetry identities on random state-action
/// pairs, exhaustively over the group.
pub fn check_symmetry(env: &dyn GeometricMdp, n_pairs: usize, tol: f64, rng: &mut dyn rand::RngCore) -> Result<()> {
    let (rep_s, rep_a) = (env.rep_state(), env.rep_action());
    let group = env.group();
    for _ in 0..n_pairs {
        let s = env.sample_state(rng);
        let mut a = Array1::from_shape_fn(rep_a.dim, |_| {
            let v: f64 = rand::Rng::sample(rng, StandardNormal);
            0.5 * v
        });
        env.action_bounds().clip(&mut a);
        let next = env.transition(s.view(), a.view());
        let r = env.reward(s.view(), a.view());
        let v = env.terminal_value(s.view());
        for g in 0..group.order {
            let gs = rep_s.act(g, s.view())?;
            let ga = rep_a.act(g, a.view())?;
            let lhs = env.transition(gs.view(), ga.view());
            let rhs = rep_s.act(g, next.view())?;
            let derr = (&lhs - &rhs).iter().map(|x| x.abs()).fold(0.0, f64::max);
            if derr > tol {
                return Err(Error::SymmetryViolation(format!(
                    "transition not equivariant at g={g}: err={derr:.3e}"
                )));
            }
            if (env.reward(gs.view(), ga.view()) - r).abs() > tol {
                return Err(Error::SymmetryViolation(format!("reward not invariant at g={g}")));
            }
            if (env.terminal_value(gs.view()) - v).abs() > tol {
                return Err(Error::SymmetryViolation(format!("terminal value not invariant at g={g}")));
            }
        }
    }
    Ok(())
}

// ── PointMass ────────────────────────────────────────────────────────────

/// N force-controlled balls in goal-relative coordinates.
///
/// Per-ball state is (position − goal, velocity), both standard-rep blocks;
/// actions are per-ball forces. Semi-implicit Euler with dt = 0.02 s.
pub struct PointMass {
    group: Arc<GroupSpec>,
    rep_state: Rep,
    rep_action: Rep,
    pub dim: usize,
    pub n_balls: usize,
    pub target_radius: f64,
    dt: f64,
    bounds: ActionBounds,
    /// Scale applied to the terminal shaping, approximating the discounted
    /// infinite-horizon tail 1/(1−γ) at γ = 0.99.
    tail: f64,
}

pub fn make_pointmass(
    group: &Arc<GroupSpec>,
    dim: usize,
    n_balls: usize,
    target_radius: f64,
) -> Result<PointMass> {
    if n_balls == 0 {
        return Err(Error::InvalidOrder("pointmass needs n_balls >= 1".into()));
    }
    let std = rep_standard(group)?;
    if std.dim != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: std.dim });
    }
    let per_ball = rep_direct_sum(&[std.clone(), std.clone()])?;
    let rep_state = rep_direct_sum(&vec![per_ball; n_balls])?;
    let rep_action = rep_direct_sum(&vec![std; n_balls])?;
    let bounds = ActionBounds::for_rep(&rep_action, 1.0);
    Ok(PointMass {
        group: group.clone(),
        rep_state,
        rep_action,
        dim,
        n_balls,
        target_radius,
        dt: 0.02,
        bounds,
        tail: 100.0,
    })
}

impl PointMass {
    fn ball_distance(&self, s: ArrayView1<f64>, b: usize) -> f64 {
        let off = b * 2 * self.dim;
        s.slice(ndarray::s![off..off + self.dim]).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn ball_speed2(&self, s: ArrayView1<f64>, b: usize) -> f64 {
        let off = b * 2 * self.dim + self.dim;
        s.slice(ndarray::s![off..off + self.dim]).iter().map(|v| v * v).sum::<f64>()
    }

    fn mean_distance(&self, s: ArrayView1<f64>) -> f64 {
        (0..self.n_balls).map(|b| self.ball_distance(s, b)).sum::<f64>() / self.n_balls as f64
    }
}

impl GeometricMdp for PointMass {
    fn group(&self) -> &Arc<GroupSpec> {
        &self.group
    }
    fn rep_state(&self) -> &Rep {
        &self.rep_state
    }
    fn rep_action(&self) -> &Rep {
        &self.rep_action
    }

    fn transition(&self, s: ArrayView1<f64>, a: ArrayView1<f64>) -> Array1<f64> {
        let d = self.dim;
        let mut next = s.to_owned();
        for b in 0..self.n_balls {
            let (po, vo, ao) = (b * 2 * d, b * 2 * d + d, b * d);
            for k in 0..d {
                let v = s[vo + k] + a[ao + k] * self.dt;
                next[vo + k] = v;
                next[po + k] = s[po + k] + v * self.dt;
            }
        }
        next
    }

    fn reward(&self, s: ArrayView1<f64>, _a: ArrayView1<f64>) -> f64 {
        if self.is_success(s) {
            1.0
        } else {
            -self.mean_distance(s)
        }
    }

    fn terminal_value(&self, s: ArrayView1<f64>) -> f64 {
        if self.is_success(s) {
            self.tail
        } else {
            let shaped = (0..self.n_balls)
                .map(|b| self.ball_distance(s, b) + 0.5 * self.ball_speed2(s, b))
                .sum::<f64>()
                / self.n_balls as f64;
            -self.tail * shaped
        }
    }

    fn action_bounds(&self) -> ActionBounds {
        self.bounds
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn horizon_cap(&self) -> usize {
        100
    }

    fn is_success(&self, s: ArrayView1<f64>) -> bool {
        (0..self.n_balls).all(|b| self.ball_distance(s, b) <= self.target_radius)
    }

    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Array1<f64> {
        let d = self.dim;
        let mut s = Array1::zeros(self.rep_state.dim);
        for b in 0..self.n_balls {
            // isotropic start: direction uniform, radius in [0.1, 0.25]
            let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let radius = 0.1 + 0.15 * rng.gen_range(0.0..1.0);
            for k in 0..d {
                dir[k] *= radius / norm;
                s[b * 2 * d + k] = dir[k];
                let v: f64 = rng.sample(StandardNormal);
                s[b * 2 * d + d + k] = 0.05 * v;
            }
        }
        s
    }
}

// ── Reacher ──────────────────────────────────────────────────────────────

/// Planar two-link arm with torque actions.
///
/// The physical state (θ₁, θ₂, θ̇₁, θ̇₂, goal) is exposed through rotation-
/// aware features. In the local frame the second joint is encoded relative
/// to the first link; in the global frame both link directions are absolute.
/// Angular velocities, sin θ₂, and torques flip sign under reflections, so
/// they carry the dihedral sign representation.
pub struct Reacher {
    group: Arc<GroupSpec>,
    rep_state: Rep,
    rep_action: Rep,
    pub local_frame: bool,
    pub l1: f64,
    pub l2: f64,
    pub goal_radius: f64,
    gear: f64,
    damping: f64,
    m2_l1_l2: f64,
    dt: f64,
    tail: f64,
}

/// Raw arm state used internally by the dynamics.
#[derive(Debug, Clone, Copy)]
struct ArmState {
    th1: f64,
    th2: f64,
    w1: f64,
    w2: f64,
    goal: [f64; 2],
}

pub fn make_reacher(group: &Arc<GroupSpec>, local_frame: bool) -> Result<Reacher> {
    let std = rep_standard(group)?;
    if std.dim != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: std.dim });
    }
    let sign = rep_sign(group)?;
    let triv = crate::group::rep_trivial(group, 1)?;
    let rep_state = if local_frame {
        // (cos θ1, sin θ1) ⊕ cos θ2 ⊕ sin θ2 ⊕ θ̇1 ⊕ θ̇2 ⊕ (goal − tip)
        rep_direct_sum(&[std.clone(), triv, sign.clone(), sign.clone(), sign.clone(), std.clone()])?
    } else {
        // (cos θ1, sin θ1) ⊕ (cos(θ1+θ2), sin(θ1+θ2)) ⊕ θ̇1 ⊕ θ̇2 ⊕ (goal − tip)
        rep_direct_sum(&[std.clone(), std.clone(), sign.clone(), sign.clone(), std.clone()])?
    };
    let rep_action = rep_direct_sum(&[sign.clone(), sign])?;
    let bounds = ActionBounds::for_rep(&rep_action, 1.0);
    debug_assert_eq!(bounds, ActionBounds::Box { half: 1.0 });
    Ok(Reacher {
        group: group.clone(),
        rep_state,
        rep_action,
        local_frame,
        l1: 0.12,
        l2: 0.12,
        goal_radius: 0.02,
        gear: 0.05,
        damping: 0.005,
        m2_l1_l2: 0.12 * 0.12,
        dt: 0.02,
        tail: 100.0,
    })
}

impl Reacher {
    fn tip(&self, th1: f64, th2: f64) -> [f64; 2] {
        [
            self.l1 * th1.cos() + self.l2 * (th1 + th2).cos(),
            self.l1 * th1.sin() + self.l2 * (th1 + th2).sin(),
        ]
    }

    pub fn encode(&self, th1: f64, th2: f64, w1: f64, w2: f64, goal: [f64; 2]) -> Array1<f64> {
        let tip = self.tip(th1, th2);
        let (ox, oy) = (goal[0] - tip[0], goal[1] - tip[1]);
        if self.local_frame {
            ndarray::arr1(&[th1.cos(), th1.sin(), th2.cos(), th2.sin(), w1, w2, ox, oy])
        } else {
            let th12 = th1 + th2;
            ndarray::arr1(&[th1.cos(), th1.sin(), th12.cos(), th12.sin(), w1, w2, ox, oy])
        }
    }

    fn decode(&self, s: ArrayView1<f64>) -> ArmState {
        let th1 = s[1].atan2(s[0]);
        let th2 = if self.local_frame {
            s[3].atan2(s[2])
        } else {
            s[3].atan2(s[2]) - th1
        };
        let (w1, w2) = (s[4], s[5]);
        let tip = self.tip(th1, th2);
        ArmState { th1, th2, w1, w2, goal: [tip[0] + s[6], tip[1] + s[7]] }
    }

    /// Two-link dynamics; depends on θ only through θ₂, which is what makes
    /// the rotation symmetry exact.
    fn accel(&self, th2: f64, w1: f64, w2: f64, tau1: f64, tau2: f64) -> (f64, f64) {
        let (m1, m2) = (1.0, 1.0);
        let (l1, l2) = (self.l1, self.l2);
        let c2 = th2.cos();
        let s2 = th2.sin();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        let h = self.m2_l1_l2 * s2;
        let c_1 = -h * (2.0 * w1 * w2 + w2 * w2);
        let c_2 = h * w1 * w1;
        let t1 = self.gear * tau1 - self.damping * w1 - c_1;
        let t2 = self.gear * tau2 - self.damping * w2 - c_2;
        let det = m11 * m22 - m12 * m12;
        ((m22 * t1 - m12 * t2) / det, (m11 * t2 - m12 * t1) / det)
    }

    fn offset_norm(s: ArrayView1<f64>) -> f64 {
        let n = s.len();
        (s[n - 2] * s[n - 2] + s[n - 1] * s[n - 1]).sqrt()
    }
}

impl GeometricMdp for Reacher {
    fn group(&self) -> &Arc<GroupSpec> {
        &self.group
    }
    fn rep_state(&self) -> &Rep {
        &self.rep_state
    }
    fn rep_action(&self) -> &Rep {
        &self.rep_action
    }

    fn transition(&self, s: ArrayView1<f64>, a: ArrayView1<f64>) -> Array1<f64> {
        let st = self.decode(s);
        let (a1, a2) = self.accel(st.th2, st.w1, st.w2, a[0], a[1]);
        let w1 = st.w1 + a1 * self.dt;
        let w2 = st.w2 + a2 * self.dt;
        let th1 = st.th1 + w1 * self.dt;
        let th2 = st.th2 + w2 * self.dt;
        self.encode(th1, th2, w1, w2, st.goal)
    }

    fn reward(&self, s: ArrayView1<f64>, _a: ArrayView1<f64>) -> f64 {
        let d = Self::offset_norm(s);
        if d <= self.goal_radius {
            1.0
        } else {
            -d
        }
    }

    fn terminal_value(&self, s: ArrayView1<f64>) -> f64 {
        let d = Self::offset_norm(s);
        if d <= self.goal_radius {
            self.tail
        } else {
            -self.tail * d
        }
    }

    fn action_bounds(&self) -> ActionBounds {
        ActionBounds::Box { half: 1.0 }
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn horizon_cap(&self) -> usize {
        200
    }

    fn is_success(&self, s: ArrayView1<f64>) -> bool {
        Self::offset_norm(s) <= self.goal_radius
    }

    fn sample_state(&self, rng: &mut dyn rand::RngCore) -> Array1<f64> {
        let th1 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let th2 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let w1: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
        let w2: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
        let ang = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let rad = rng.gen_range(0.05..0.20);
        self.encode(th1, th2, w1, w2, [rad * ang.cos(), rad * ang.sin()])
    }
}

// ── C4-symmetric gridworld ───────────────────────────────────────────────

/// Deterministic N×N gridworld with four cardinal moves, wall clamping, and
/// a 90°-rotation-closed goal set. Reward is −1 per step and 0 on goal
/// cells; goal cells are absorbing.
#[derive(Debug, Clone)]
pub struct GridMdp {
    pub n: usize,
    pub gamma: f64,
    pub reward_map: Array2<f64>,
    goal: Vec<(usize, usize)>,
}

/// Cardinal moves in (row, col) deltas: up, right, down, left.
pub const GRID_ACTIONS: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

pub fn make_grid_mdp(n: usize, goal: &[(usize, usize)], gamma: f64) -> Result<GridMdp> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::InvalidOrder(format!("grid size must be odd, got {n}")));
    }
    if !(0.0..1.0).contains(&gamma) || gamma <= 0.0 {
        return Err(Error::InvalidConfig(format!("gamma must lie in (0,1), got {gamma}")));
    }
    if goal.is_empty() {
        return Err(Error::EmptyInput("goal set is empty".into()));
    }
    let mut goal: Vec<(usize, usize)> = goal.to_vec();
    goal.sort_unstable();
    goal.dedup();
    for &(r, c) in &goal {
        if r >= n || c >= n {
            return Err(Error::InvalidConfig(format!("goal cell ({r},{c}) outside {n}x{n} grid")));
        }
        let rot = (c, n - 1 - r);
        if goal.binary_search(&rot).is_err() {
            return Err(Error::SymmetryViolation(format!(
                "goal set is not closed under 90-degree rotation: missing {rot:?}"
            )));
        }
    }
    let mut reward_map = Array2::from_elem((n, n), -1.0);
    for &(r, c) in &goal {
        reward_map[[r, c]] = 0.0;
    }
    Ok(GridMdp { n, gamma, reward_map, goal })
}

impl GridMdp {
    pub fn is_goal(&self, cell: (usize, usize)) -> bool {
        self.goal.binary_search(&cell).is_ok()
    }

    pub fn goal_cells(&self) -> &[(usize, usize)] {
        &self.goal
    }

    /// Reward of taking any action in `cell`.
    pub fn reward(&self, cell: (usize, usize)) -> f64 {
        self.reward_map[[cell.0, cell.1]]
    }

    /// Deterministic move with wall clamping; goal cells absorb.
    pub fn transition(&self, cell: (usize, usize), action: usize) -> (usize, usize) {
        if self.is_goal(cell) {
            return cell;
        }
        let (dr, dc) = GRID_ACTIONS[action];
        let r = (cell.0 as isize + dr).clamp(0, self.n as isize - 1) as usize;
        let c = (cell.1 as isize + dc).clamp(0, self.n as isize - 1) as usize;
        (r, c)
    }

    /// 90°·k clockwise rotation of a cell about the grid center.
    pub fn rotate_cell(&self, cell: (usize, usize), quarter_turns: usize) -> (usize, usize) {
        let mut cur = cell;
        for _ in 0..quarter_turns % 4 {
            cur = (cur.1, self.n - 1 - cur.0);
        }
        cur
    }

    /// Action index permutation matching `rotate_cell`:
    /// (up, right, down, left) → (right, down, left, up) per quarter turn.
    pub fn rotate_action(action: usize, quarter_turns: usize) -> usize {
        (action + quarter_turns) % 4
    }
}
