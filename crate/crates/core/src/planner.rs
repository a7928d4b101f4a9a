//! Model-predictive gait planning over the discretized pendulum model.
//!
//! Two planning modes share one horizon assembly. The base mode is a QP
//! that tracks a periodic gait while steering the body around obstacles
//! through linearized half-space constraints. The foot mode extends it to
//! a mixed-integer program that selects a landing region around a ground
//! obstacle, shapes the swing-foot height profile, and can force a minimum
//! travel distance so the solution cannot stall in front of the obstacle.
//!
//! The decision vector is ordered so the sparse factorization stays banded:
//! per-interval blocks of `[input, next state, avoidance slacks]` first,
//! then swing-foot blocks, then a dense border with footholds, region
//! slacks, binaries, and the travel-distance block.

use crate::error::{Error, Result};
use crate::geometry::{quadrant_regions, Ellipse, Obstacle};
use crate::linalg::Vec2;
use crate::lipm::{
    discretize, solve_periodic_frontal, solve_periodic_sagittal, DiscreteModel, LipmParams,
    LipmState, PeriodicGaitRef, Side,
};
use crate::miqp::{
    solve_miqp, AbsEncoding, MiqpProblem, MiqpSettings, MiqpSolution, MiqpStatus, ProblemBuilder,
};
use crate::qp::{QpProblem, QpSettings, QpSolver, SolveStatus};
use crate::scalar::{c, Real};

/// Horizon shape, cost weights, and geometric margins for both MPC modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig<T> {
    /// Steps in the plan, counting the one currently in stance.
    pub n_steps: usize,
    pub t_step_default: T,
    pub t_step_min: T,
    /// Step durations move in multiples of this quantum.
    pub step_time_quantum: T,
    /// Node spacing of the horizon.
    pub dt: T,
    /// Nominal lateral distance between consecutive footholds.
    pub step_width: T,
    pub w_state: T,
    pub w_foot: T,
    pub w_effort: T,
    pub w_slack: T,
    pub w_swing: T,
    pub w_foot_avoid: T,
    pub w_dis: T,
    pub k_x: T,
    pub k_y: T,
    /// Normalized foothold-error threshold for shortening the next step.
    pub timing_threshold: T,
    /// Sweep duration when building the velocity-aware avoidance ellipse.
    pub ellipse_horizon: T,
    /// Inflation margin added to ground-obstacle footprints.
    pub avoid_margin: T,
    /// Required swing height above a ground obstacle.
    pub swing_clearance: T,
    /// Baseline swing apex on flat ground.
    pub swing_apex: T,
    /// Extent of the landing-region boxes from the obstacle.
    pub region_outer: T,
    /// Big-M constant for region membership rows.
    pub big_m: T,
    /// Big-M constant for the travel-distance split.
    pub dis_m: T,
}

impl<T: Real> Default for MpcConfig<T> {
    fn default() -> Self {
        MpcConfig {
            n_steps: 4,
            t_step_default: c(0.4),
            t_step_min: c(0.2),
            step_time_quantum: c(0.1),
            dt: c(0.02),
            step_width: c(0.2),
            w_state: c(10.0),
            w_foot: c(30.0),
            w_effort: c(0.05),
            w_slack: c(400.0),
            w_swing: c(10.0),
            w_foot_avoid: c(400.0),
            w_dis: c(100.0),
            k_x: c(1.0),
            k_y: c(0.5),
            timing_threshold: c(0.5),
            ellipse_horizon: c(0.4),
            avoid_margin: c(0.1),
            swing_clearance: c(0.05),
            swing_apex: c(0.08),
            region_outer: c(10.0),
            big_m: c(100.0),
            dis_m: c(10.0),
        }
    }
}

impl<T: Real> MpcConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::Domain("horizon needs at least two steps"));
        }
        if self.dt <= T::zero() {
            return Err(Error::Domain("node spacing must be positive"));
        }
        if self.t_step_min < self.dt {
            return Err(Error::Domain("minimum step time below node spacing"));
        }
        if !multiple_of(self.t_step_default, self.dt) {
            return Err(Error::Domain("default step time not a node multiple"));
        }
        let weights = [
            self.w_state,
            self.w_foot,
            self.w_effort,
            self.w_slack,
            self.w_swing,
            self.w_foot_avoid,
            self.w_dis,
        ];
        if weights.iter().any(|&w| w < T::zero()) {
            return Err(Error::Domain("cost weights must be non-negative"));
        }
        Ok(())
    }
}

pub(crate) fn multiple_of<T: Real>(v: T, q: T) -> bool {
    let r = (v / q).round() * q - v;
    r.abs() <= c::<T>(1e-9)
}

/// Which optional parts of the formulation are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlanFlags {
    /// Velocity-aware avoidance directions from a swept ellipse instead of
    /// radial directions from the obstacle center.
    pub ellipse_mode: bool,
    /// Minimum-travel-distance block in the foot MPC.
    pub min_distance: bool,
}

/// Step durations and stance sides over the horizon, with progress through
/// the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule<T> {
    pub durations: Vec<T>,
    pub stance_sides: Vec<Side>,
    pub elapsed_in_step: T,
}

impl<T: Real> StepSchedule<T> {
    /// Fresh schedule of default-length steps starting on `stance`.
    pub fn nominal(cfg: &MpcConfig<T>, stance: Side) -> Self {
        let mut sides = Vec::with_capacity(cfg.n_steps);
        let mut s = stance;
        for _ in 0..cfg.n_steps {
            sides.push(s);
            s = s.other();
        }
        StepSchedule {
            durations: vec![cfg.t_step_default; cfg.n_steps],
            stance_sides: sides,
            elapsed_in_step: T::zero(),
        }
    }

    pub fn validate(&self, cfg: &MpcConfig<T>) -> Result<()> {
        if self.durations.len() != cfg.n_steps || self.stance_sides.len() != cfg.n_steps {
            return Err(Error::Domain("schedule length does not match horizon"));
        }
        for &d in &self.durations {
            if d < cfg.t_step_min || !multiple_of(d, cfg.step_time_quantum) {
                return Err(Error::Domain("step duration off the timing grid"));
            }
        }
        for w in self.stance_sides.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Domain("stance sides must alternate"));
            }
        }
        if self.elapsed_in_step < T::zero() || self.elapsed_in_step > self.durations[0] {
            return Err(Error::Domain("elapsed time outside the current step"));
        }
        Ok(())
    }

    /// Horizon node counts per step; the current step contributes only its
    /// remaining nodes, never fewer than one.
    pub fn segment_nodes(&self, dt: T) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.durations.len());
        for (s, &d) in self.durations.iter().enumerate() {
            let span = if s == 0 { d - self.elapsed_in_step } else { d };
            let n = (span / dt).round().to_usize().unwrap_or(0);
            out.push(n.max(1));
        }
        out
    }

    /// Shift the schedule across a step transition, keeping any overshoot
    /// of the elapsed time and topping up with a default-length step.
    pub fn rotate(&mut self, default_duration: T) {
        let done = self.durations.remove(0);
        self.durations.push(default_duration);
        let side = self.stance_sides.remove(0);
        self.stance_sides.push(side);
        self.elapsed_in_step = (self.elapsed_in_step - done).max(T::zero());
    }
}

/// Everything the planner needs about the world at one control cycle.
#[derive(Debug, Clone)]
pub struct PlanInput<'a, T> {
    /// Current body state; its foothold is the active stance position.
    pub state: LipmState<T>,
    /// Current swing-foot position.
    pub swing_pos: [T; 3],
    pub schedule: &'a StepSchedule<T>,
    pub obstacles: &'a [Obstacle<T>],
    pub xdot_ref: T,
    pub ydot_ref: T,
    /// Absolute time of this cycle, used to shift cached plans.
    pub time: T,
    pub flags: PlanFlags,
}

/// Body trajectory plan from the base QP.
#[derive(Debug, Clone)]
pub struct BasePlan<T> {
    /// Position and velocity per horizon node, excluding the current state.
    pub com_traj: Vec<(Vec2<T>, Vec2<T>)>,
    /// One foothold per step; entry 0 echoes the fixed stance position.
    pub footholds: Vec<Vec2<T>>,
    /// Control input per interval.
    pub inputs: Vec<Vec2<T>>,
    /// Avoidance slacks, node-major per obstacle.
    pub slacks: Vec<T>,
    /// Node counts per step at solve time.
    pub seg_nodes: Vec<usize>,
    pub objective: T,
}

impl<T: Real> BasePlan<T> {
    /// Largest avoidance slack magnitude.
    pub fn slack_norm(&self) -> T {
        self.slacks
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }
}

/// Swing-foot and landing-region plan from the foot MIQP.
#[derive(Debug, Clone)]
pub struct FootPlan<T> {
    pub base: BasePlan<T>,
    /// Swing-foot samples over the remaining current step.
    pub swing_traj: Vec<[T; 3]>,
    /// Region index chosen for each decided step.
    pub regions: Vec<usize>,
    /// Region slack values, step-major per region.
    pub rho_foot_xy: Vec<T>,
    /// Height slack per swing node.
    pub rho_foot_z: Vec<T>,
    pub rho_dis: T,
    /// Absolute predicted travel distances over the horizon.
    pub x_dis: T,
    pub y_dis: T,
}

impl<T: Real> FootPlan<T> {
    /// Landing region of the next step.
    pub fn landing_region(&self) -> usize {
        self.regions[0]
    }
}

/// Index map from plan entities into the decision vector.
#[derive(Debug, Clone)]
pub struct Layout<T> {
    n_obs: usize,
    n_nodes: usize,
    block: usize,
    seg_nodes: Vec<usize>,
    transition_nodes: Vec<usize>,
    swing_nodes: usize,
    band_len: usize,
    n_vars: usize,
    off_footholds: usize,
    foot: Option<FootOffsets>,
    stance: Vec2<T>,
    start: Vec2<T>,
}

#[derive(Debug, Clone)]
struct FootOffsets {
    off_region_slack: usize,
    off_binaries: usize,
    dis: Option<DisOffsets>,
}

#[derive(Debug, Clone)]
struct DisOffsets {
    abs_x: AbsEncoding,
    abs_y: AbsEncoding,
    rho_dis: usize,
}

impl<T: Real> Layout<T> {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Nodes that end each step.
    pub fn transition_nodes(&self) -> &[usize] {
        &self.transition_nodes
    }

    /// First decision index of the state at node `k` (1-based).
    pub fn state(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.n_nodes);
        (k - 1) * self.block + 2
    }

    /// First decision index of the input over interval `k` (0-based).
    pub fn input(&self, k: usize) -> usize {
        debug_assert!(k < self.n_nodes);
        k * self.block
    }

    /// Avoidance slack of node `k` against body obstacle `j`.
    pub fn slack(&self, k: usize, j: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.n_nodes && j < self.n_obs);
        (k - 1) * self.block + 6 + j
    }

    /// First decision index of the foothold of step `s` (1-based; step 0 is
    /// the fixed stance).
    pub fn foothold(&self, s: usize) -> usize {
        debug_assert!(s >= 1 && s < self.seg_nodes.len());
        self.off_footholds + 2 * (s - 1)
    }

    /// First decision index of swing sample `i` (1-based).
    pub fn swing(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.swing_nodes);
        self.n_nodes * self.block + (i - 1) * 4
    }

    fn swing_slack(&self, i: usize) -> usize {
        self.swing(i) + 3
    }

    fn region_slack(&self, s: usize, region: usize) -> usize {
        let f = self.foot.as_ref().expect("base layout has no regions");
        f.off_region_slack + 4 * (s - 1) + region
    }

    fn binary(&self, s: usize, region: usize) -> usize {
        let f = self.foot.as_ref().expect("base layout has no regions");
        f.off_binaries + 4 * (s - 1) + region
    }

    /// Border column hint for the solver's factorization.
    pub fn border(&self) -> Vec<usize> {
        (self.band_len..self.n_vars).collect()
    }

    /// Which step an interval's input belongs to.
    fn segment_of_interval(&self, k: usize) -> usize {
        let mut end = 0;
        for (s, &n) in self.seg_nodes.iter().enumerate() {
            end += n;
            if k < end {
                return s;
            }
        }
        self.seg_nodes.len() - 1
    }
}

/// Per-step periodic references for both planes.
#[derive(Debug, Clone)]
struct SegmentRefs<T> {
    sag: PeriodicGaitRef<T>,
    fro: PeriodicGaitRef<T>,
}

fn segment_refs<T: Real>(
    params: &LipmParams<T>,
    cfg: &MpcConfig<T>,
    schedule: &StepSchedule<T>,
    xdot_ref: T,
    ydot_ref: T,
) -> Result<Vec<SegmentRefs<T>>> {
    schedule
        .durations
        .iter()
        .zip(&schedule.stance_sides)
        .map(|(&dur, &side)| {
            Ok(SegmentRefs {
                sag: solve_periodic_sagittal(params, xdot_ref, dur)?,
                fro: solve_periodic_frontal(params, ydot_ref, cfg.step_width, dur, side)?,
            })
        })
        .collect()
}

/// Baseline swing-height profile: ramp up, hold the apex, ramp down.
pub(crate) fn swing_profile<T: Real>(apex: T, phase: T) -> T {
    let q = c::<T>(0.25);
    let p = phase.max(T::zero()).min(T::one());
    if p < q {
        apex * p / q
    } else if p <= T::one() - q {
        apex
    } else {
        apex * (T::one() - p) / q
    }
}

/// Height the swing foot must keep at a ground-plane point, zero away from
/// the obstacle's inflated footprint.
fn obstacle_floor<T: Real>(cfg: &MpcConfig<T>, ground: &Obstacle<T>, p: Vec2<T>) -> T {
    let hw = ground.footprint_halfwidth + cfg.avoid_margin;
    let inside = (p.x - ground.center.x).abs() <= hw && (p.y - ground.center.y).abs() <= hw;
    if inside {
        ground.height + cfg.swing_clearance
    } else {
        T::zero()
    }
}

/// MPC planner holding configuration, model, and previous-solution caches
/// used for linearization and swing references.
#[derive(Debug, Clone)]
pub struct Planner<T> {
    cfg: MpcConfig<T>,
    params: LipmParams<T>,
    model: DiscreteModel<T>,
    prev_com: Option<(T, Vec<Vec2<T>>)>,
    prev_swing: Option<(T, Vec<[T; 3]>, Vec2<T>)>,
}

impl<T: Real> Planner<T> {
    pub fn new(cfg: MpcConfig<T>, params: LipmParams<T>) -> Result<Self> {
        cfg.validate()?;
        let model = discretize(&params, cfg.dt)?;
        Ok(Planner {
            cfg,
            params,
            model,
            prev_com: None,
            prev_swing: None,
        })
    }

    pub fn config(&self) -> &MpcConfig<T> {
        &self.cfg
    }

    pub fn params(&self) -> &LipmParams<T> {
        &self.params
    }

    /// Drop caches that become stale when a step transition occurs.
    pub fn note_transition(&mut self) {
        self.prev_swing = None;
    }

    /// Linearization point for each horizon node, shifting the cached
    /// trajectory by the time advanced since it was planned.
    fn linearization(&self, input: &PlanInput<T>, n_nodes: usize) -> Vec<Vec2<T>> {
        let fallback = input.state.position();
        match &self.prev_com {
            None => vec![fallback; n_nodes],
            Some((t0, traj)) => {
                let shift = ((input.time - *t0) / self.cfg.dt)
                    .round()
                    .to_isize()
                    .unwrap_or(0)
                    .max(0) as usize;
                (0..n_nodes)
                    .map(|k| {
                        let idx = (k + shift).min(traj.len().saturating_sub(1));
                        traj.get(idx).copied().unwrap_or(fallback)
                    })
                    .collect()
            }
        }
    }

    /// Reference swing trajectory: the previous solution time-shifted, or a
    /// straight line with the baseline height profile on a cold start.
    fn swing_reference(
        &self,
        input: &PlanInput<T>,
        ground: &Obstacle<T>,
        end_guess: Vec2<T>,
        n_swing: usize,
    ) -> Vec<[T; 3]> {
        let headroom = c::<T>(0.01);
        if let Some((t0, traj, _)) = &self.prev_swing {
            let shift = ((input.time - *t0) / self.cfg.dt)
                .round()
                .to_isize()
                .unwrap_or(0)
                .max(0) as usize;
            if !traj.is_empty() {
                return (0..n_swing)
                    .map(|i| {
                        let idx = (i + shift).min(traj.len() - 1);
                        traj[idx]
                    })
                    .collect();
            }
        }
        let start = Vec2::new(input.swing_pos[0], input.swing_pos[1]);
        (1..=n_swing)
            .map(|i| {
                let phase = c::<T>(i as f64) / c::<T>(n_swing as f64);
                let xy = Vec2::new(
                    start.x + (end_guess.x - start.x) * phase,
                    start.y + (end_guess.y - start.y) * phase,
                );
                let z = if i == n_swing {
                    T::zero()
                } else {
                    swing_profile(self.cfg.swing_apex, phase)
                        .max(obstacle_floor(&self.cfg, ground, xy))
                        + headroom
                };
                [xy.x, xy.y, z]
            })
            .collect()
    }

    /// Predicted landing point of the current swing foot, used to aim the
    /// height profile and the cold-start reference.
    fn landing_guess(
        &self,
        input: &PlanInput<T>,
        refs: &[SegmentRefs<T>],
        n0: usize,
    ) -> Vec2<T> {
        if let Some((_, _, landing)) = &self.prev_swing {
            return *landing;
        }
        let t0 = c::<T>(n0 as f64) * self.cfg.dt;
        let pred = Vec2::new(
            input.state.x + input.state.xdot * t0,
            input.state.y + input.state.ydot * t0,
        );
        Vec2::new(pred.x + refs[1].sag.u_bar, pred.y + refs[1].fro.u_bar)
    }

    /// Assemble the shared horizon; `foot` carries the ground obstacle when
    /// building the mixed-integer variant.
    fn assemble(
        &self,
        input: &PlanInput<T>,
        foot: Option<&Obstacle<T>>,
    ) -> Result<(MiqpProblem<T>, Layout<T>)> {
        input.schedule.validate(&self.cfg)?;
        let cfg = &self.cfg;
        let refs = segment_refs(
            &self.params,
            cfg,
            input.schedule,
            input.xdot_ref,
            input.ydot_ref,
        )?;
        let body: Vec<&Obstacle<T>> = input.obstacles.iter().filter(|o| !o.is_ground()).collect();
        let n_obs = body.len();
        let seg_nodes = input.schedule.segment_nodes(cfg.dt);
        let n_nodes: usize = seg_nodes.iter().sum();
        let mut transition_nodes = Vec::with_capacity(seg_nodes.len());
        let mut acc = 0;
        for &n in &seg_nodes {
            acc += n;
            transition_nodes.push(acc);
        }
        let block = 6 + n_obs;
        let n_swing = if foot.is_some() { seg_nodes[0] } else { 0 };
        let stance = input.state.foothold();

        let mut b = ProblemBuilder::new();
        // Band: per-interval blocks, then per-swing-node blocks.
        for _ in 0..n_nodes {
            b.add_vars(block);
        }
        for _ in 0..n_swing {
            b.add_vars(4);
        }
        let band_len = b.nvars();
        let off_footholds = b.nvars();
        for _ in 1..seg_nodes.len() {
            b.add_vars(2);
        }

        let mut layout = Layout {
            n_obs,
            n_nodes,
            block,
            seg_nodes: seg_nodes.clone(),
            transition_nodes: transition_nodes.clone(),
            swing_nodes: n_swing,
            band_len,
            n_vars: 0,
            off_footholds,
            foot: None,
            stance,
            start: input.state.position(),
        };

        // Dynamics equalities; the first interval starts from the known
        // state, which lands on the right-hand side.
        let a = &self.model.a;
        let bm = &self.model.b;
        let x0 = [
            input.state.x,
            input.state.xdot,
            input.state.y,
            input.state.ydot,
        ];
        for k in 0..n_nodes {
            let xi = layout.state(k + 1);
            let ui = layout.input(k);
            for r in 0..4 {
                let mut row: Vec<(usize, T)> = vec![(xi + r, T::one())];
                let mut rhs = T::zero();
                if k == 0 {
                    for (j, &x0j) in x0.iter().enumerate() {
                        rhs += a[r][j] * x0j;
                    }
                } else {
                    let xp = layout.state(k);
                    for j in 0..4 {
                        if a[r][j] != T::zero() {
                            row.push((xp + j, -a[r][j]));
                        }
                    }
                }
                for j in 0..2 {
                    if bm[r][j] != T::zero() {
                        row.push((ui + j, -bm[r][j]));
                    }
                }
                b.add_row(&row, rhs, rhs);
            }
        }

        // Tracking costs at the node that ends each step.
        for (s, (&t_end, seg)) in transition_nodes.iter().zip(&refs).enumerate() {
            let xi = layout.state(t_end);
            let two = c::<T>(2.0);
            let w_state2 = two * cfg.w_state;
            let vy_ref = seg.fro.velocity(seg.fro.t_step);
            // Velocity tracking; the foot MPC may retarget it through the
            // shared travel slack, handled after the border exists.
            if foot.is_none() || !input.flags.min_distance {
                b.add_quad_cost(xi + 1, w_state2, input.xdot_ref);
                b.add_quad_cost(xi + 3, w_state2, vy_ref);
            }
            // Body-to-foothold offset tracking.
            let w_foot2 = two * cfg.w_foot;
            let off_x = seg.sag.end_offset();
            let off_y = seg.fro.end_offset();
            if s == 0 {
                b.add_quad_cost(xi, w_foot2, stance.x + off_x);
                b.add_quad_cost(xi + 2, w_foot2, stance.y + off_y);
            } else {
                let fi = layout.foothold(s);
                difference_cost(&mut b, xi, fi, cfg.w_foot, off_x);
                difference_cost(&mut b, xi + 2, fi + 1, cfg.w_foot, off_y);
            }
        }

        // Input effort about the active foothold.
        for k in 0..n_nodes {
            let ui = layout.input(k);
            let s = layout.segment_of_interval(k);
            if s == 0 {
                b.add_quad_cost(ui, c::<T>(2.0) * cfg.w_effort, stance.x);
                b.add_quad_cost(ui + 1, c::<T>(2.0) * cfg.w_effort, stance.y);
            } else {
                let fi = layout.foothold(s);
                difference_cost(&mut b, ui, fi, cfg.w_effort, T::zero());
                difference_cost(&mut b, ui + 1, fi + 1, cfg.w_effort, T::zero());
            }
        }

        // Linearized avoidance half-spaces with penalized slacks.
        let p_lin = self.linearization(input, n_nodes);
        for (j, obs) in body.iter().enumerate() {
            let ellipse = if input.flags.ellipse_mode {
                Ellipse::swept(obs, cfg.ellipse_horizon).ok()
            } else {
                None
            };
            for k in 1..=n_nodes {
                let t_k = c::<T>(k as f64) * cfg.dt;
                let center = obs.position_at(t_k);
                let (normal, rhs) = avoidance_row(p_lin[k - 1], center, obs.radius, &ellipse);
                let xi = layout.state(k);
                let si = layout.slack(k, j);
                b.add_row(
                    &[(xi, normal.x), (xi + 2, normal.y), (si, T::one())],
                    rhs,
                    T::infinity(),
                );
                b.add_quad(si, si, c::<T>(2.0) * cfg.w_slack);
            }
        }

        if let Some(ground) = foot {
            layout.foot = Some(self.assemble_foot(input, &mut b, &mut layout, &refs, ground)?);
        }

        layout.n_vars = b.nvars();
        let prob = b.build()?;
        Ok((prob, layout))
    }

    /// Foot-mode extras: swing trajectory, landing regions, and the
    /// minimum-travel block. Returns the border offsets.
    fn assemble_foot(
        &self,
        input: &PlanInput<T>,
        b: &mut ProblemBuilder<T>,
        layout: &mut Layout<T>,
        refs: &[SegmentRefs<T>],
        ground: &Obstacle<T>,
    ) -> Result<FootOffsets> {
        let cfg = &self.cfg;
        let n_swing = layout.swing_nodes;
        let n_steps = layout.seg_nodes.len();
        let two = c::<T>(2.0);

        // Landing regions around the inflated footprint.
        let inflated = ground.footprint_halfwidth + cfg.avoid_margin;
        let regions = quadrant_regions(ground.center, inflated, cfg.region_outer)?;

        let off_region_slack = b.nvars();
        for _ in 0..4 * (n_steps - 1) {
            b.add_var();
        }
        let off_binaries = b.nvars();
        for _ in 0..4 * (n_steps - 1) {
            b.add_binary();
        }
        // add_binary interleaves box rows, so binary columns are contiguous
        // starting at off_binaries.
        for s in 1..n_steps {
            let fi = layout.foothold(s);
            let mut excl: Vec<(usize, T)> = Vec::with_capacity(4);
            for (i, region) in regions.iter().enumerate() {
                let bi = off_binaries + 4 * (s - 1) + i;
                let si = off_region_slack + 4 * (s - 1) + i;
                excl.push((bi, T::one()));
                for &(n, rhs) in &region.rows {
                    b.add_row(
                        &[(fi, n.x), (fi + 1, n.y), (si, T::one()), (bi, cfg.big_m)],
                        T::neg_infinity(),
                        rhs + cfg.big_m,
                    );
                }
                b.add_quad(si, si, two * cfg.w_foot_avoid);
            }
            b.add_row(&excl, T::one(), T::one());
        }

        // Swing-foot samples: landing pinned to the next foothold, heights
        // floored along the straight line to the predicted landing.
        let end_guess = self.landing_guess(input, refs, n_swing);
        let f_ref = self.swing_reference(input, ground, end_guess, n_swing);
        let start = Vec2::new(input.swing_pos[0], input.swing_pos[1]);
        let w_swing2 = two * cfg.w_swing;
        for i in 1..=n_swing {
            let fi = layout.swing(i);
            let ri = layout.swing_slack(i);
            let phase = c::<T>(i as f64) / c::<T>(n_swing as f64);
            let line = Vec2::new(
                start.x + (end_guess.x - start.x) * phase,
                start.y + (end_guess.y - start.y) * phase,
            );
            let h = if i == n_swing {
                T::zero()
            } else {
                swing_profile(cfg.swing_apex, phase).max(obstacle_floor(cfg, ground, line))
            };
            b.add_row(&[(fi + 2, T::one()), (ri, T::one())], h, T::infinity());
            b.add_quad(ri, ri, two * cfg.w_foot_avoid);
            if i == n_swing {
                let ui = layout.foothold(1);
                b.add_row(&[(fi, T::one()), (ui, -T::one())], T::zero(), T::zero());
                b.add_row(&[(fi + 1, T::one()), (ui + 1, -T::one())], T::zero(), T::zero());
                b.bound_var(fi + 2, T::zero(), T::zero());
            } else {
                b.bound_var(fi + 2, T::zero(), c(2.0));
                // The landing sample is tied to the foothold, which has its
                // own cost; referencing it twice would tug the foothold.
                b.add_quad_cost(fi, w_swing2, f_ref[i - 1][0]);
                b.add_quad_cost(fi + 1, w_swing2, f_ref[i - 1][1]);
                b.add_quad_cost(fi + 2, w_swing2, f_ref[i - 1][2]);
            }
        }

        // Minimum-travel block: split the horizon displacement into signed
        // parts, then require progress the slack must otherwise buy back.
        // The split is tight only at integral binaries, which is exactly
        // when the requirement row is evaluated.
        let dis = if input.flags.min_distance {
            let xn = layout.state(layout.n_nodes);
            let abs_x = b.encode_abs(&[(xn, T::one())], -input.state.x, cfg.dis_m);
            let abs_y = b.encode_abs(&[(xn + 2, T::one())], -input.state.y, cfg.dis_m);
            let rho_dis = b.add_var();
            b.bound_var(rho_dis, T::zero(), T::infinity());
            b.add_quad(rho_dis, rho_dis, two * cfg.w_dis);
            let target = (input.xdot_ref.abs() + input.ydot_ref.abs()) * cfg.t_step_default;
            b.add_row(
                &[
                    (rho_dis, T::one()),
                    (abs_x.pos, cfg.k_x),
                    (abs_x.neg, cfg.k_x),
                    (abs_y.pos, cfg.k_y),
                    (abs_y.neg, cfg.k_y),
                ],
                target,
                T::infinity(),
            );
            // Velocity tracking shifted by the shared travel slack.
            for (&t_end, seg) in layout.transition_nodes.iter().zip(refs) {
                let xi = layout.state(t_end);
                let vy_ref = seg.fro.velocity(seg.fro.t_step);
                difference_cost(b, xi + 1, rho_dis, cfg.w_state, input.xdot_ref);
                difference_cost(b, xi + 3, rho_dis, cfg.w_state, vy_ref);
            }
            Some(DisOffsets {
                abs_x,
                abs_y,
                rho_dis,
            })
        } else {
            None
        };

        Ok(FootOffsets {
            off_region_slack,
            off_binaries,
            dis,
        })
    }

    /// Body-avoidance QP over the horizon.
    pub fn build_base_mpc(
        &self,
        input: &PlanInput<T>,
    ) -> Result<(QpProblem<T>, Layout<T>)> {
        let (prob, layout) = self.assemble(input, None)?;
        Ok((prob.qp, layout))
    }

    /// Foot-avoidance MIQP; requires exactly one ground obstacle in the
    /// input's obstacle list.
    pub fn build_foot_mpc(
        &self,
        input: &PlanInput<T>,
    ) -> Result<(MiqpProblem<T>, Layout<T>)> {
        let grounds: Vec<&Obstacle<T>> = input.obstacles.iter().filter(|o| o.is_ground()).collect();
        if grounds.len() != 1 {
            return Err(Error::Invalid(format!(
                "foot planning expects one ground obstacle, found {}",
                grounds.len()
            )));
        }
        let ground = *grounds[0];
        self.assemble(input, Some(&ground))
    }

    /// Unpack a base solution into a typed plan.
    pub fn extract_base_plan(
        &self,
        x: &[T],
        layout: &Layout<T>,
        objective: T,
    ) -> Result<BasePlan<T>> {
        if x.len() != layout.n_vars {
            return Err(Error::Dimension(format!(
                "solution length {} does not match layout {}",
                x.len(),
                layout.n_vars
            )));
        }
        let com_traj = (1..=layout.n_nodes)
            .map(|k| {
                let i = layout.state(k);
                (Vec2::new(x[i], x[i + 2]), Vec2::new(x[i + 1], x[i + 3]))
            })
            .collect();
        let mut footholds = vec![layout.stance];
        for s in 1..layout.seg_nodes.len() {
            let i = layout.foothold(s);
            footholds.push(Vec2::new(x[i], x[i + 1]));
        }
        let inputs = (0..layout.n_nodes)
            .map(|k| {
                let i = layout.input(k);
                Vec2::new(x[i], x[i + 1])
            })
            .collect();
        let mut slacks = Vec::with_capacity(layout.n_nodes * layout.n_obs);
        for k in 1..=layout.n_nodes {
            for j in 0..layout.n_obs {
                slacks.push(x[layout.slack(k, j)]);
            }
        }
        Ok(BasePlan {
            com_traj,
            footholds,
            inputs,
            slacks,
            seg_nodes: layout.seg_nodes.clone(),
            objective,
        })
    }

    /// Unpack a foot solution, validating region exclusivity.
    pub fn extract_foot_plan(
        &self,
        x: &[T],
        layout: &Layout<T>,
        objective: T,
    ) -> Result<FootPlan<T>> {
        let base = self.extract_base_plan(x, layout, objective)?;
        let offs = layout
            .foot
            .as_ref()
            .ok_or(Error::PlanUnavailable("layout carries no foot block"))?;
        let n_steps = layout.seg_nodes.len();
        let tol = c::<T>(1e-4);
        let mut regions = Vec::with_capacity(n_steps - 1);
        for s in 1..n_steps {
            let mut sum = T::zero();
            let mut best = 0;
            let mut best_v = T::neg_infinity();
            for i in 0..4 {
                let v = x[layout.binary(s, i)];
                sum += v;
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            if (sum - T::one()).abs() > tol || best_v < T::one() - tol {
                return Err(Error::Invalid(format!(
                    "step {} region selection is not integral",
                    s
                )));
            }
            regions.push(best);
        }
        let swing_traj = (1..=layout.swing_nodes)
            .map(|i| {
                let f = layout.swing(i);
                [x[f], x[f + 1], x[f + 2]]
            })
            .collect();
        let mut rho_foot_xy = Vec::with_capacity(4 * (n_steps - 1));
        for s in 1..n_steps {
            for i in 0..4 {
                rho_foot_xy.push(x[layout.region_slack(s, i)]);
            }
        }
        let rho_foot_z = (1..=layout.swing_nodes)
            .map(|i| x[layout.swing_slack(i)])
            .collect();
        let (rho_dis, x_dis, y_dis) = match &offs.dis {
            Some(d) => (
                x[d.rho_dis],
                x[d.abs_x.pos] + x[d.abs_x.neg],
                x[d.abs_y.pos] + x[d.abs_y.neg],
            ),
            None => {
                let end = base.com_traj.last().map(|&(p, _)| p).unwrap_or(layout.start);
                (
                    T::zero(),
                    (end.x - layout.start.x).abs(),
                    (end.y - layout.start.y).abs(),
                )
            }
        };
        Ok(FootPlan {
            base,
            swing_traj,
            regions,
            rho_foot_xy,
            rho_foot_z,
            rho_dis,
            x_dis,
            y_dis,
        })
    }

    fn qp_settings(&self) -> QpSettings<T> {
        let mut s = QpSettings::default();
        s.eps_abs = c(1e-5);
        s
    }

    /// Solve the base QP and cache the trajectory for relinearization.
    pub fn plan_base(&mut self, input: &PlanInput<T>) -> Result<BasePlan<T>> {
        let (prob, layout) = self.build_base_mpc(input)?;
        let border = layout.border();
        let mut solver = QpSolver::new(prob, self.qp_settings(), &border)?;
        let sol = solver.solve()?;
        if sol.status != SolveStatus::Solved {
            return Err(Error::PlanUnavailable("base planning did not converge"));
        }
        let plan = self.extract_base_plan(&sol.x, &layout, sol.objective)?;
        self.prev_com = Some((input.time, plan.com_traj.iter().map(|&(p, _)| p).collect()));
        Ok(plan)
    }

    /// Solve the foot MIQP and cache both trajectory and swing references.
    pub fn plan_foot(&mut self, input: &PlanInput<T>) -> Result<FootPlan<T>> {
        let (prob, layout) = self.build_foot_mpc(input)?;
        let border = layout.border();
        // Node relaxations only steer the branching, so they run coarse;
        // the incumbent is re-solved tightly and polished.
        let mut settings = MiqpSettings::default();
        settings.qp = self.qp_settings();
        settings.qp.eps_abs = c(1e-4);
        settings.qp.max_iter = 2500;
        settings.int_tol = c(1e-3);
        settings.gap_tol = c(1e-4);
        settings.final_eps = c(1e-6);
        settings.node_limit = 300;
        let sol: MiqpSolution<T> = solve_miqp(prob, settings, &border)?;
        let usable = sol.status == MiqpStatus::Optimal
            || (sol.status == MiqpStatus::NodeLimit && !sol.x.is_empty());
        if !usable {
            return Err(Error::PlanUnavailable("foot planning found no region mix"));
        }
        let plan = self.extract_foot_plan(&sol.x, &layout, sol.objective)?;
        self.prev_com = Some((
            input.time,
            plan.base.com_traj.iter().map(|&(p, _)| p).collect(),
        ));
        self.prev_swing = Some((input.time, plan.swing_traj.clone(), plan.base.footholds[1]));
        Ok(plan)
    }
}

/// Add `w (a - b - target)^2` over two decision variables.
fn difference_cost<T: Real>(b: &mut ProblemBuilder<T>, a: usize, bb: usize, w: T, target: T) {
    let two = c::<T>(2.0);
    b.add_quad(a, a, two * w);
    b.add_quad(bb, bb, two * w);
    b.add_quad(a, bb, -two * w);
    b.add_linear(a, -two * w * target);
    b.add_linear(bb, two * w * target);
}

/// Half-space normal and offset for one node: tangent to the swept ellipse
/// when available and the point is outside, radial from the extrapolated
/// center otherwise.
fn avoidance_row<T: Real>(
    p_lin: Vec2<T>,
    center: Vec2<T>,
    radius: T,
    ellipse: &Option<Ellipse<T>>,
) -> (Vec2<T>, T) {
    if let Some(e) = ellipse {
        if let Ok((point, normal)) = e.closest_point(p_lin) {
            return (normal, normal.dot(point));
        }
    }
    let d = p_lin.sub(center);
    let n = match d.unit(c(1e-9)) {
        Ok(u) => u,
        Err(_) => Vec2::new(T::one(), T::zero()),
    };
    (n, radius + n.dot(center))
}

/// Normalized foothold tracking error of the next step: how far the inputs
/// of that step stray from its planned foothold, scaled by the nominal gait
/// offsets.
pub fn foothold_error<T: Real>(
    cfg: &MpcConfig<T>,
    params: &LipmParams<T>,
    xdot_ref: T,
    ydot_ref: T,
    next_side: Side,
    plan: &BasePlan<T>,
) -> Result<T> {
    let sag = solve_periodic_sagittal(params, xdot_ref, cfg.t_step_default)?;
    let fro = solve_periodic_frontal(
        params,
        ydot_ref,
        cfg.step_width,
        cfg.t_step_default,
        next_side,
    )?;
    let norm = (sag.u_bar.abs() + fro.u_bar.abs()).max(c(1e-3));
    let start = plan.seg_nodes[0];
    let end = start + plan.seg_nodes[1];
    let foothold = plan.footholds[1];
    let mut sum = T::zero();
    for k in start..end {
        sum += plan.inputs[k].sub(foothold).norm();
    }
    Ok(sum / c::<T>((end - start) as f64) / norm)
}

/// Shorten the next step by one quantum when the foothold tracking error
/// crosses the threshold, down to the minimum duration. The current step is
/// never touched.
pub fn adapt_step_timing<T: Real>(
    cfg: &MpcConfig<T>,
    params: &LipmParams<T>,
    xdot_ref: T,
    ydot_ref: T,
    plan: &BasePlan<T>,
    schedule: &StepSchedule<T>,
) -> Result<StepSchedule<T>> {
    let e = foothold_error(
        cfg,
        params,
        xdot_ref,
        ydot_ref,
        schedule.stance_sides[1],
        plan,
    )?;
    let mut out = schedule.clone();
    let shortened = schedule.durations[1] - cfg.step_time_quantum;
    if e > cfg.timing_threshold && shortened >= cfg.t_step_min - c(1e-9) {
        out.durations[1] = shortened;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::signed_distance_to_square;

    fn params() -> LipmParams<f64> {
        LipmParams::default()
    }

    /// State sitting exactly on the periodic orbit at a step start.
    fn orbit_state(cfg: &MpcConfig<f64>, refs: &SegmentRefs<f64>) -> LipmState<f64> {
        let _ = cfg;
        LipmState {
            x: 0.0,
            xdot: refs.sag.velocity(0.0),
            y: 0.0,
            ydot: refs.fro.velocity(0.0),
            u_x: refs.sag.u_bar,
            u_y: refs.fro.u_bar,
        }
    }

    fn steady_input<'a>(
        schedule: &'a StepSchedule<f64>,
        state: LipmState<f64>,
        obstacles: &'a [Obstacle<f64>],
        xdot_ref: f64,
        flags: PlanFlags,
    ) -> PlanInput<'a, f64> {
        PlanInput {
            state,
            swing_pos: [state.u_x, -state.u_y, 0.0],
            schedule,
            obstacles,
            xdot_ref,
            ydot_ref: 0.0,
            time: 0.0,
            flags,
        }
    }

    fn body_obstacle(x: f64, y: f64, r: f64) -> Obstacle<f64> {
        Obstacle {
            center: Vec2::new(x, y),
            velocity: Vec2::zero(),
            radius: r,
            height: 1.5,
            footprint_halfwidth: 0.0,
        }
    }

    fn ground_obstacle(x: f64, y: f64, hw: f64, h: f64) -> Obstacle<f64> {
        Obstacle {
            center: Vec2::new(x, y),
            velocity: Vec2::zero(),
            radius: hw,
            height: h,
            footprint_halfwidth: hw,
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = MpcConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.t_step_default = 0.41;
        assert!(cfg.validate().is_err());
        cfg = MpcConfig::default();
        cfg.n_steps = 1;
        assert!(cfg.validate().is_err());
        cfg = MpcConfig::default();
        cfg.w_slack = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule_nodes_and_rotation() {
        let cfg = MpcConfig::<f64>::default();
        let mut s = StepSchedule::nominal(&cfg, Side::Left);
        assert!(s.validate(&cfg).is_ok());
        assert_eq!(s.segment_nodes(cfg.dt), vec![20, 20, 20, 20]);

        s.elapsed_in_step = 0.3;
        assert_eq!(s.segment_nodes(cfg.dt)[0], 5);
        s.elapsed_in_step = 0.399;
        assert_eq!(s.segment_nodes(cfg.dt)[0], 1);

        s.elapsed_in_step = 0.41;
        assert!(s.validate(&cfg).is_err());
        s.rotate(cfg.t_step_default);
        assert!((s.elapsed_in_step - 0.01).abs() < 1e-12);
        assert_eq!(s.stance_sides[0], Side::Right);
        assert_eq!(s.durations.len(), 4);
        assert!((s.durations[3] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn swing_profile_ramps_and_holds() {
        assert!(swing_profile(0.08f64, 0.0).abs() < 1e-12);
        assert!((swing_profile(0.08f64, 0.125) - 0.04).abs() < 1e-12);
        assert!((swing_profile(0.08f64, 0.5) - 0.08).abs() < 1e-12);
        assert!((swing_profile(0.08f64, 1.0)).abs() < 1e-12);
        assert!(swing_profile(0.08f64, 1.3).abs() < 1e-12);
    }

    #[test]
    fn rest_plan_stays_at_rest() {
        let mut cfg = MpcConfig::<f64>::default();
        cfg.step_width = 0.0;
        let mut planner = Planner::new(cfg, params()).unwrap();
        let schedule = StepSchedule::nominal(&cfg, Side::Left);
        let state = LipmState {
            x: 0.0,
            xdot: 0.0,
            y: 0.0,
            ydot: 0.0,
            u_x: 0.0,
            u_y: 0.0,
        };
        let input = steady_input(&schedule, state, &[], 0.0, PlanFlags::default());
        let plan = planner.plan_base(&input).unwrap();
        for &(p, v) in &plan.com_traj {
            assert!(p.norm() < 1e-6, "drifted to {:?}", p);
            assert!(v.norm() < 1e-6);
        }
        for f in &plan.footholds {
            assert!(f.norm() < 1e-6);
        }
    }

    #[test]
    fn steady_gait_tracks_periodic_references() {
        let cfg = MpcConfig::<f64>::default();
        let p = params();
        let xdot_ref = 0.5;
        let mut planner = Planner::new(cfg, p).unwrap();
        let schedule = StepSchedule::nominal(&cfg, Side::Left);
        let refs = segment_refs(&p, &cfg, &schedule, xdot_ref, 0.0).unwrap();
        let state = orbit_state(&cfg, &refs[0]);
        let input = steady_input(&schedule, state, &[], xdot_ref, PlanFlags::default());
        let plan = planner.plan_base(&input).unwrap();

        let mut node = 0;
        for (s, seg) in refs.iter().enumerate() {
            node += plan.seg_nodes[s];
            let (pos, vel) = plan.com_traj[node - 1];
            let foot = plan.footholds[s];
            let vy_ref = seg.fro.velocity(seg.fro.t_step);
            assert!(
                (vel.x - xdot_ref).abs() < 2e-3,
                "step {}: vx {} vs {}",
                s,
                vel.x,
                xdot_ref
            );
            assert!(
                (vel.y - vy_ref).abs() < 2e-3,
                "step {}: vy {} vs {}",
                s,
                vel.y,
                vy_ref
            );
            assert!(
                (pos.x - foot.x - seg.sag.end_offset()).abs() < 2e-3,
                "step {}: x offset {}",
                s,
                pos.x - foot.x - seg.sag.end_offset()
            );
            assert!(
                (pos.y - foot.y - seg.fro.end_offset()).abs() < 2e-3,
                "step {}: y offset {}",
                s,
                pos.y - foot.y - seg.fro.end_offset()
            );
        }
        // Footholds alternate across the walking line.
        for w in plan.footholds.windows(2) {
            let gap = (w[1].y - w[0].y).abs();
            assert!(gap > 0.1 && gap < 0.4, "lateral gap {}", gap);
            assert!(w[1].x > w[0].x - 1e-3);
        }
        assert!(plan.slacks.is_empty());
    }

    #[test]
    fn static_obstacle_bends_the_path() {
        let cfg = MpcConfig::<f64>::default();
        let p = params();
        let xdot_ref = 0.5;
        let mut planner = Planner::new(cfg, p).unwrap();
        let schedule = StepSchedule::nominal(&cfg, Side::Left);
        let refs = segment_refs(&p, &cfg, &schedule, xdot_ref, 0.0).unwrap();
        let state = orbit_state(&cfg, &refs[0]);
        let obstacles = [body_obstacle(0.5, 0.05, 0.25)];
        let input = steady_input(&schedule, state, &obstacles, xdot_ref, PlanFlags::default());

        // Re-solving relinearizes around the previous trajectory.
        let mut plan = planner.plan_base(&input).unwrap();
        for _ in 0..3 {
            plan = planner.plan_base(&input).unwrap();
        }

        let mut min_clear = f64::INFINITY;
        for &(pos, _) in &plan.com_traj {
            let d = pos.sub(obstacles[0].center).norm() - obstacles[0].radius;
            min_clear = min_clear.min(d);
        }
        assert!(min_clear > -5e-3, "path cuts the obstacle by {}", -min_clear);
        assert!(plan.slack_norm() < 5e-3, "slack {}", plan.slack_norm());
        // The path actually deviates rather than stopping short.
        let end = plan.com_traj.last().unwrap().0;
        assert!(end.x > 0.5, "no forward progress: {:?}", end);
    }

    #[test]
    fn extraction_round_trips_the_solution_vector() {
        let cfg = MpcConfig::<f64>::default();
        let p = params();
        let planner = Planner::new(cfg, p).unwrap();
        let mut schedule = StepSchedule::nominal(&cfg, Side::Right);
        schedule.elapsed_in_step = 0.2;
        let refs = segment_refs(&p, &cfg, &schedule, 0.3, 0.0).unwrap();
        let state = orbit_state(&cfg, &refs[0]);
        let obstacles = [body_obstacle(0.6, -0.1, 0.2)];
        let input = steady_input(&schedule, state, &obstacles, 0.3, PlanFlags::default());

        let (prob, layout) = planner.build_base_mpc(&input).unwrap();
        let border = layout.border();
        let mut solver = QpSolver::new(prob, planner.qp_settings(), &border).unwrap();
        let sol = solver.solve().unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        let plan = planner
            .extract_base_plan(&sol.x, &layout, sol.objective)
            .unwrap();

        assert_eq!(plan.com_traj.len(), layout.n_nodes());
        assert_eq!(plan.inputs.len(), layout.n_nodes());
        assert_eq!(plan.seg_nodes[0], 10);
        for k in 1..=layout.n_nodes() {
            let i = layout.state(k);
            let (pos, vel) = plan.com_traj[k - 1];
            assert_eq!(pos.x, sol.x[i]);
            assert_eq!(vel.x, sol.x[i + 1]);
            assert_eq!(pos.y, sol.x[i + 2]);
            assert_eq!(vel.y, sol.x[i + 3]);
            let u = layout.input(k - 1);
            assert_eq!(plan.inputs[k - 1].x, sol.x[u]);
            assert_eq!(plan.inputs[k - 1].y, sol.x[u + 1]);
            assert_eq!(plan.slacks[k - 1], sol.x[layout.slack(k, 0)]);
        }
        for s in 1..cfg.n_steps {
            let f = layout.foothold(s);
            assert_eq!(plan.footholds[s].x, sol.x[f]);
            assert_eq!(plan.footholds[s].y, sol.x[f + 1]);
        }
    }

    #[test]
    fn foot_plan_with_distant_obstacle_matches_base() {
        let cfg = MpcConfig::<f64>::default();
        let p = params();
        let xdot_ref = 0.4;
        let schedule = StepSchedule::nominal(&cfg, Side::Left);
        let refs = segment_refs(&p, &cfg, &schedule, xdot_ref, 0.0).unwrap();
        let state = orbit_state(&cfg, &refs[0]);
        let obstacles = [ground_obstacle(-5.0, 0.0, 0.2, 0.1)];
        let input = steady_input(&schedule, state, &obstacles, xdot_ref, PlanFlags::default());

        let mut base_planner = Planner::new(cfg, p).unwrap();
        let base = base_planner.plan_base(&input).unwrap();
        let mut foot_planner = Planner::new(cfg, p).unwrap();
        let foot = foot_planner.plan_foot(&input).unwrap();

        for (a, b) in base.footholds.iter().zip(&foot.base.footholds) {
            assert!(
                a.sub(*b).norm() < 1e-4,
                "foothold moved: {:?} vs {:?}",
                a,
                b
            );
        }
        // Everything lands ahead of an obstacle that far behind.
        assert_eq!(foot.regions, vec![0, 0, 0]);
        assert!(foot.rho_dis.abs() < 1e-9);
        let swing = &foot.swing_traj;
        assert_eq!(swing.len(), base.seg_nodes[0]);
        let apex = swing
            .iter()
            .map(|s| s[2])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(apex > 0.04 && apex < 0.15, "apex {}", apex);
        let last = swing.last().unwrap();
        assert!((last[0] - foot.base.footholds[1].x).abs() < 1e-6);
        assert!((last[1] - foot.base.footholds[1].y).abs() < 1e-6);
        assert!(last[2].abs() < 1e-9);
    }

    #[test]
    fn foot_plan_avoids_landing_in_the_footprint() {
        let cfg = MpcConfig::<f64>::default();
        let p = params();
        let xdot_ref = 0.4;
        let schedule = StepSchedule::nominal(&cfg, Side::Left);
        let refs = segment_refs(&p, &cfg, &schedule, xdot_ref, 0.0).unwrap();
        let state = orbit_state(&cfg, &refs[0]);
        // Directly on the walking line, one step ahead.
        let ground = ground_obstacle(0.35, 0.0, 0.2, 0.3);
        let obstacles = [ground];
        let input = steady_input(&schedule, state, &obstacles, xdot_ref, PlanFlags::default());

        let mut planner = Planner::new(cfg, p).unwrap();
        let plan = planner.plan_foot(&input).unwrap();

        let inflated = ground.footprint_halfwidth + cfg.avoid_margin;
        let regions = quadrant_regions(ground.center, inflated, cfg.region_outer).unwrap();
        for (s, (&region, foothold)) in plan
            .regions
            .iter()
            .zip(plan.base.footholds.iter().skip(1))
            .enumerate()
        {
            let clear = regions[region].clearance(*foothold);
            assert!(
                clear > -1e-2,
                "step {} lands {} outside region {}",
                s + 1,
                clear,
                region
            );
            let d = signed_distance_to_square(*foothold, ground.center, inflated);
            assert!(
                d > -1e-2,
                "step {} foothold {:?} is {} inside the footprint",
                s + 1,
                foothold,
                d
            );
        }
    }

    #[test]
    fn timing_adaptation_reacts_to_tracking_error() {
        let cfg = MpcConfig::<f64>::default();
        let p = params();
        let schedule = StepSchedule::nominal(&cfg, Side::Left);
        let n: usize = schedule.segment_nodes(cfg.dt).iter().sum();

        let clean = BasePlan {
            com_traj: vec![(Vec2::zero(), Vec2::zero()); n],
            footholds: vec![Vec2::zero(); cfg.n_steps],
            inputs: vec![Vec2::zero(); n],
            slacks: Vec::new(),
            seg_nodes: schedule.segment_nodes(cfg.dt),
            objective: 0.0,
        };
        let kept = adapt_step_timing(&cfg, &p, 0.4, 0.0, &clean, &schedule).unwrap();
        assert_eq!(kept.durations, schedule.durations);

        let mut noisy = clean.clone();
        for k in 20..40 {
            noisy.inputs[k] = Vec2::new(0.5, 0.0);
        }
        let shortened = adapt_step_timing(&cfg, &p, 0.4, 0.0, &noisy, &schedule).unwrap();
        assert!((shortened.durations[1] - 0.3).abs() < 1e-12);
        assert!((shortened.durations[0] - 0.4).abs() < 1e-12);

        let mut floor = schedule.clone();
        floor.durations[1] = cfg.t_step_min;
        let held = adapt_step_timing(&cfg, &p, 0.4, 0.0, &noisy, &floor).unwrap();
        assert!((held.durations[1] - cfg.t_step_min).abs() < 1e-12);
    }

    #[test]
    fn minimum_distance_slack_balances_tracking() {
        let cfg = MpcConfig::<f64>::default();
        let p = params();
        let xdot_ref = 0.4;
        let schedule = StepSchedule::nominal(&cfg, Side::Left);
        let refs = segment_refs(&p, &cfg, &schedule, xdot_ref, 0.0).unwrap();
        let state = orbit_state(&cfg, &refs[0]);
        let ground = ground_obstacle(0.35, 0.0, 0.2, 0.3);
        let obstacles = [ground];
        let flags = PlanFlags {
            ellipse_mode: false,
            min_distance: true,
        };
        let input = steady_input(&schedule, state, &obstacles, xdot_ref, flags);

        let planner = Planner::new(cfg, p).unwrap();
        let (prob, layout) = planner.build_foot_mpc(&input).unwrap();
        let probc = prob.clone();
        let border = layout.border();
        let mut settings = MiqpSettings::default();
        settings.qp = planner.qp_settings();
        settings.node_limit = 300;
        let sol = solve_miqp(prob, settings, &border).unwrap();
        assert_eq!(sol.status, MiqpStatus::Optimal);
        let plan = planner
            .extract_foot_plan(&sol.x, &layout, sol.objective)
            .unwrap();

        let target = xdot_ref.abs() * cfg.t_step_default;
        let travel = cfg.k_x * plan.x_dis + cfg.k_y * plan.y_dis;
        assert!(
            plan.rho_dis + travel >= target - 1e-5,
            "requirement violated: rho {} travel {}",
            plan.rho_dis,
            travel
        );
        // The slack also shifts the tracked velocities, so off the bound it
        // settles where that trade-off is stationary, or gets pinned at zero
        // when the trade-off asks to slow down. With the requirement row
        // slack, the only legal force on it is the nonnegativity bound
        // pushing up, and only while the slack sits at zero.
        assert!(plan.rho_dis > -1e-9, "negative slack {}", plan.rho_dis);
        let rho_col = layout.foot.as_ref().unwrap().dis.as_ref().unwrap().rho_dis;
        if plan.rho_dis + travel > target + 1e-3 {
            let (cols, vals) = probc.qp.p.row(rho_col);
            let mut grad = probc.qp.q[rho_col];
            for (&j, &v) in cols.iter().zip(vals) {
                grad += v * sol.x[j];
            }
            assert!(grad > -1e-3, "slack pulled against no constraint: {}", grad);
            assert!(
                plan.rho_dis * grad.max(0.0) < 1e-4,
                "bound force on an interior slack: rho {} grad {}",
                plan.rho_dis,
                grad
            );
            assert!(plan.rho_dis < 0.05, "slack {} beyond tracking scale", plan.rho_dis);
        }
        // The split matches the actual horizon displacement.
        let end = plan.base.com_traj.last().unwrap().0;
        assert!((plan.x_dis - (end.x - state.x).abs()).abs() < 1e-5);
        assert!((plan.y_dis - (end.y - state.y).abs()).abs() < 1e-5);
    }
}
