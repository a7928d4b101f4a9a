//! Closed-loop simulation of the planner on a kinematic plant.
//!
//! The plant is the pendulum model itself under exact flow, with a swing
//! foot that replays the planned trajectory. Each control cycle replans,
//! applies the first planned input as the center of pressure for the next
//! plant tick, and fires a step transition once the active step has used
//! up its duration. Obstacles move on constant velocities or waypoint
//! paths. The trace records every tick; metrics judge it against the true
//! obstacle geometry afterwards.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{signed_distance_to_square, Obstacle};
use crate::linalg::Vec2;
use crate::lipm::{propagate_exact, LipmParams, LipmState, Side};
use crate::planner::{
    adapt_step_timing, foothold_error, multiple_of, swing_profile, BasePlan, FootPlan, MpcConfig,
    PlanFlags, PlanInput, Planner, StepSchedule,
};
use crate::scalar::{c, Real};

/// Obstacle with a motion spec: constant velocity from the embedded shape,
/// or piecewise-linear travel through timed waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingObstacle<T> {
    /// Geometry and pose at time zero; its velocity field drives the
    /// constant-velocity mode.
    pub shape: Obstacle<T>,
    /// `(arrival time, position)` pairs with strictly increasing times.
    /// Empty means constant velocity. After the last waypoint the obstacle
    /// parks.
    pub waypoints: Vec<(T, Vec2<T>)>,
}

impl<T: Real> MovingObstacle<T> {
    pub fn constant(shape: Obstacle<T>) -> Self {
        MovingObstacle {
            shape,
            waypoints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = T::zero();
        for &(t, _) in &self.waypoints {
            if t <= prev {
                return Err(Error::Domain("waypoint times must increase from zero"));
            }
            prev = t;
        }
        Ok(())
    }

    /// Obstacle as the planner should see it at time `t`: current center
    /// and the velocity it will hold over the near horizon.
    pub fn state_at(&self, t: T) -> Obstacle<T> {
        let mut out = self.shape;
        if self.waypoints.is_empty() {
            out.center = self.shape.position_at(t);
            return out;
        }
        let mut from = (T::zero(), self.shape.center);
        for &(tw, pw) in &self.waypoints {
            if t <= tw {
                let v = pw.sub(from.1).scale(T::one() / (tw - from.0));
                out.center = from.1.add(v.scale(t - from.0));
                out.velocity = v;
                return out;
            }
            from = (tw, pw);
        }
        out.center = from.1;
        out.velocity = Vec2::new(T::zero(), T::zero());
        out
    }
}

/// Which optional planner behaviors the scenario exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScenarioFlags {
    pub ellipse_mode: bool,
    pub adaptive_timing: bool,
    pub min_distance: bool,
}

/// Full description of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub cfg: MpcConfig<T>,
    pub params: LipmParams<T>,
    /// Body state at time zero; its foothold is the initial stance.
    pub initial: LipmState<T>,
    pub initial_swing: [T; 3],
    pub initial_stance: Side,
    pub xdot_ref: T,
    pub ydot_ref: T,
    pub obstacles: Vec<MovingObstacle<T>>,
    pub flags: ScenarioFlags,
    pub duration: T,
    pub replan_period: T,
    pub plant_tick: T,
    /// Forward progress below this marks the run unsuccessful.
    pub progress_threshold: T,
    pub seed: u64,
}

impl<T: Real> Scenario<T> {
    /// Neutral scenario: standing start on the left foot, no obstacles,
    /// zero commands, five seconds.
    pub fn new(cfg: MpcConfig<T>) -> Self {
        let half = cfg.step_width / c(2.0);
        Scenario {
            cfg,
            params: LipmParams::new(c(0.9), c(9.81)).expect("default pendulum constants"),
            initial: LipmState {
                x: T::zero(),
                y: T::zero(),
                xdot: T::zero(),
                ydot: T::zero(),
                u_x: T::zero(),
                u_y: half,
            },
            initial_swing: [T::zero(), -half, T::zero()],
            initial_stance: Side::Left,
            xdot_ref: T::zero(),
            ydot_ref: T::zero(),
            obstacles: Vec::new(),
            flags: ScenarioFlags::default(),
            duration: c(5.0),
            replan_period: cfg.dt,
            plant_tick: c(0.002),
            progress_threshold: T::zero(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.duration < T::zero() {
            return Err(Error::Domain("duration must be non-negative"));
        }
        if self.plant_tick <= T::zero() {
            return Err(Error::Domain("plant tick must be positive"));
        }
        if self.replan_period < self.cfg.dt - c(1e-9) {
            return Err(Error::Domain("replanning faster than the control grid"));
        }
        if !multiple_of(self.replan_period, self.plant_tick)
            || !multiple_of(self.cfg.dt, self.plant_tick)
        {
            return Err(Error::Domain("periods must sit on the plant tick grid"));
        }
        if self.initial_swing[2] < T::zero() {
            return Err(Error::Domain("swing foot below ground"));
        }
        for o in &self.obstacles {
            o.validate()?;
        }
        Ok(())
    }
}

/// What happened on one tick of the control loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickStatus {
    /// No replan due; carried the previous plan.
    Coast,
    Planned,
    /// Replan attempted and failed; previous plan held.
    Failed,
}

impl TickStatus {
    pub fn code(self) -> i64 {
        match self {
            TickStatus::Coast => 0,
            TickStatus::Planned => 1,
            TickStatus::Failed => 2,
        }
    }
}

/// One plant tick of the trace. The recorded state is the tick's starting
/// state with the applied center of pressure in its foothold slot, so the
/// next record follows from it under the exact flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord<T> {
    pub t: T,
    pub state: LipmState<T>,
    /// Stance foot position (the foothold steps land on, distinct from the
    /// applied center of pressure above).
    pub stance: Vec2<T>,
    pub swing: [T; 3],
    /// Obstacle centers at this tick, in scenario order.
    pub obstacles: Vec<Vec2<T>>,
    pub slack_norm: T,
    /// Active step duration in the schedule at this tick.
    pub step_duration: T,
    /// Landing region of the next step, `-1` outside foot mode.
    pub region: i64,
    pub status: TickStatus,
    /// Wall-clock seconds of the replan on this tick, zero otherwise.
    pub solve_time: T,
    /// A step transition fired at the start of this tick.
    pub transition: bool,
}

/// Every tick of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTrace<T> {
    pub ticks: Vec<TickRecord<T>>,
    pub plant_tick: T,
    /// More than five consecutive replans failed and the run stopped early.
    pub aborted: bool,
}

/// Scenario scores computed from a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics<T> {
    /// Smallest body-to-obstacle surface distance, infinite without body
    /// obstacles.
    pub min_body_clearance: T,
    /// Smallest signed planar distance from either foot to a ground
    /// obstacle's footprint while that foot is below the obstacle top.
    pub min_foot_clearance_xy: T,
    /// Highest swing-foot point recorded over a ground obstacle's
    /// footprint.
    pub swing_apex_over_obstacle: T,
    pub forward_progress: T,
    pub success: bool,
    pub solve_time_mean: T,
    pub solve_time_max: T,
    pub solve_time_median: T,
}

/// Plan held between replans: the input schedule plus a swing trajectory
/// sampled on the control grid, starting at the swing position at plan
/// time.
struct ActivePlan<T> {
    time: T,
    base: BasePlan<T>,
    swing: Vec<[T; 3]>,
    region: i64,
}

impl<T: Real> ActivePlan<T> {
    fn from_foot(time: T, swing_now: [T; 3], plan: FootPlan<T>) -> Self {
        let mut swing = Vec::with_capacity(plan.swing_traj.len() + 1);
        swing.push(swing_now);
        swing.extend_from_slice(&plan.swing_traj);
        let region = plan.landing_region() as i64;
        ActivePlan {
            time,
            base: plan.base,
            swing,
            region,
        }
    }

    /// Base plans carry no swing trajectory; synthesize the baseline
    /// profile toward the planned foothold over the rest of the step.
    fn from_base(
        time: T,
        swing_now: [T; 3],
        cfg: &MpcConfig<T>,
        schedule: &StepSchedule<T>,
        plan: BasePlan<T>,
    ) -> Self {
        let n0 = plan.seg_nodes[0];
        let duration = schedule.durations[0];
        let elapsed = schedule.elapsed_in_step;
        let target = plan.footholds[1];
        let mut swing = Vec::with_capacity(n0 + 1);
        swing.push(swing_now);
        for j in 1..=n0 {
            let frac = c::<T>(j as f64) / c(n0 as f64);
            let phase = (elapsed + c::<T>(j as f64) * cfg.dt) / duration;
            swing.push([
                swing_now[0] + (target.x - swing_now[0]) * frac,
                swing_now[1] + (target.y - swing_now[1]) * frac,
                swing_profile(cfg.swing_apex, phase),
            ]);
        }
        ActivePlan {
            time,
            base: plan,
            swing,
            region: -1,
        }
    }

    /// First-interval input held over its control interval, later
    /// intervals when the plan is older than one.
    fn input_at(&self, t: T, dt: T) -> Vec2<T> {
        let idx = ((t - self.time) / dt)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(self.base.inputs.len() - 1);
        self.base.inputs[idx]
    }

    /// Swing position interpolated on the control grid.
    fn swing_at(&self, t: T, dt: T) -> [T; 3] {
        let last = self.swing.len() - 1;
        let q = ((t - self.time) / dt).max(T::zero());
        let lo = q.floor().to_usize().unwrap_or(0).min(last);
        if lo == last {
            return self.swing[last];
        }
        let w = q - c(lo as f64);
        let a = self.swing[lo];
        let b = self.swing[lo + 1];
        [
            a[0] + (b[0] - a[0]) * w,
            a[1] + (b[1] - a[1]) * w,
            a[2] + (b[2] - a[2]) * w,
        ]
    }
}

fn tick_count<T: Real>(span: T, tick: T) -> u64 {
    (span / tick).round().to_u64().unwrap_or(0)
}

/// Run one scenario to completion. Solver failures hold the previous plan;
/// more than five in a row abort with the partial trace.
pub fn run_scenario<T: Real>(s: &Scenario<T>) -> Result<PlanTrace<T>> {
    s.validate()?;
    let h = s.plant_tick;
    let n_ticks = tick_count(s.duration, h);
    let replan_every = tick_count(s.replan_period, h).max(1);

    let mut planner = Planner::new(s.cfg, s.params)?;
    let mut schedule = StepSchedule::nominal(&s.cfg, s.initial_stance);
    let mut state = s.initial;
    let mut stance = state.foothold();
    let mut swing = s.initial_swing;
    let mut ticks_in_step: u64 = 0;
    let mut plan: Option<ActivePlan<T>> = None;
    let mut fail_streak = 0usize;
    let mut aborted = false;
    let mut ticks = Vec::with_capacity(n_ticks as usize);

    for i in 0..n_ticks {
        let t = h * c(i as f64);

        // Step transition: swing lands on its planned foothold and the
        // feet swap roles. The held plan describes the finished step, so
        // it is dropped rather than replayed.
        let mut fired = false;
        if ticks_in_step >= tick_count(schedule.durations[0], h) {
            let landing = plan
                .as_ref()
                .map(|p| p.base.footholds[1])
                .unwrap_or(Vec2::new(swing[0], swing[1]));
            swing = [stance.x, stance.y, T::zero()];
            stance = landing;
            schedule.rotate(s.cfg.t_step_default);
            schedule.elapsed_in_step = T::zero();
            ticks_in_step = 0;
            planner.note_transition();
            plan = None;
            fired = true;
        }
        schedule.elapsed_in_step = h * c(ticks_in_step as f64);

        let mut status = TickStatus::Coast;
        let mut solve_time = T::zero();
        let obstacles: Vec<Obstacle<T>> = s.obstacles.iter().map(|o| o.state_at(t)).collect();
        if i % replan_every == 0 {
            let mut seen = state;
            seen.u_x = stance.x;
            seen.u_y = stance.y;
            let input = PlanInput {
                state: seen,
                swing_pos: swing,
                schedule: &schedule,
                obstacles: &obstacles,
                xdot_ref: s.xdot_ref,
                ydot_ref: s.ydot_ref,
                time: t,
                flags: PlanFlags {
                    ellipse_mode: s.flags.ellipse_mode,
                    min_distance: s.flags.min_distance,
                },
            };
            let foot_mode = obstacles.iter().filter(|o| o.is_ground()).count() == 1;
            let started = Instant::now();
            let result = if foot_mode {
                planner
                    .plan_foot(&input)
                    .map(|p| ActivePlan::from_foot(t, swing, p))
            } else {
                planner
                    .plan_base(&input)
                    .map(|p| ActivePlan::from_base(t, swing, &s.cfg, &schedule, p))
            };
            solve_time = c(started.elapsed().as_secs_f64());
            match result {
                Ok(p) => {
                    if s.flags.adaptive_timing {
                        schedule = adapt_step_timing(
                            &s.cfg,
                            &s.params,
                            s.xdot_ref,
                            s.ydot_ref,
                            &p.base,
                            &schedule,
                        )?;
                    }
                    plan = Some(p);
                    status = TickStatus::Planned;
                    fail_streak = 0;
                }
                Err(_) => {
                    status = TickStatus::Failed;
                    fail_streak += 1;
                    if fail_streak > 5 {
                        aborted = true;
                    }
                }
            }
        }

        let (applied, slack_norm, region) = match &plan {
            Some(p) => (p.input_at(t, s.cfg.dt), p.base.slack_norm(), p.region),
            None => (stance, T::zero(), -1),
        };
        if let Some(p) = &plan {
            swing = p.swing_at(t, s.cfg.dt);
        }

        let mut recorded = state;
        recorded.u_x = applied.x;
        recorded.u_y = applied.y;
        ticks.push(TickRecord {
            t,
            state: recorded,
            stance,
            swing,
            obstacles: obstacles.iter().map(|o| o.center).collect(),
            slack_norm,
            step_duration: schedule.durations[0],
            region,
            status,
            solve_time,
            transition: fired,
        });
        if aborted {
            break;
        }

        state = propagate_exact(&s.params, &state, applied, h)?;
        ticks_in_step += 1;
    }

    Ok(PlanTrace {
        ticks,
        plant_tick: h,
        aborted,
    })
}

/// Judge a trace against the true obstacle geometry.
pub fn compute_metrics<T: Real>(trace: &PlanTrace<T>, s: &Scenario<T>) -> Result<Metrics<T>> {
    let first = trace
        .ticks
        .first()
        .ok_or(Error::Domain("empty trace has no metrics"))?;
    let last = trace.ticks.last().unwrap();

    let mut body = T::infinity();
    let mut foot = T::infinity();
    let mut apex = T::zero();
    for rec in &trace.ticks {
        let com = rec.state.position();
        let swing_xy = Vec2::new(rec.swing[0], rec.swing[1]);
        for mo in &s.obstacles {
            let ob = mo.state_at(rec.t);
            if ob.is_ground() {
                let hw = ob.footprint_halfwidth;
                if rec.swing[2] < ob.height {
                    foot = foot.min(signed_distance_to_square(swing_xy, ob.center, hw));
                }
                foot = foot.min(signed_distance_to_square(rec.stance, ob.center, hw));
                let over = (swing_xy.x - ob.center.x).abs() <= hw
                    && (swing_xy.y - ob.center.y).abs() <= hw;
                if over {
                    apex = apex.max(rec.swing[2]);
                }
            } else {
                body = body.min(com.sub(ob.center).norm() - ob.radius);
            }
        }
    }

    let forward_progress = last.state.x - first.state.x;
    let mut solves: Vec<T> = trace
        .ticks
        .iter()
        .filter(|r| r.status != TickStatus::Coast)
        .map(|r| r.solve_time)
        .collect();
    let (mean, max, median) = if solves.is_empty() {
        (T::zero(), T::zero(), T::zero())
    } else {
        solves.sort_by(|a, b| a.partial_cmp(b).expect("finite solve times"));
        let sum = solves.iter().fold(T::zero(), |a, &b| a + b);
        (
            sum / c(solves.len() as f64),
            *solves.last().unwrap(),
            solves[solves.len() / 2],
        )
    };

    let success = !trace.aborted
        && body >= T::zero()
        && foot >= T::zero()
        && forward_progress >= s.progress_threshold;
    Ok(Metrics {
        min_body_clearance: body,
        min_foot_clearance_xy: foot,
        swing_apex_over_obstacle: apex,
        forward_progress,
        success,
        solve_time_mean: mean,
        solve_time_max: max,
        solve_time_median: median,
    })
}

/// Normalized foothold tracking error of one planning instance per
/// candidate stance time, everything else held fixed. Used to pick the
/// timing threshold offline.
pub fn sweep_step_time<T: Real>(
    cfg: &MpcConfig<T>,
    params: LipmParams<T>,
    state: LipmState<T>,
    stance: Side,
    obstacles: &[Obstacle<T>],
    xdot_ref: T,
    ydot_ref: T,
    flags: PlanFlags,
    candidates: &[T],
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(candidates.len());
    for &d in candidates {
        if d < cfg.t_step_min || !multiple_of(d, cfg.step_time_quantum) {
            return Err(Error::Domain("candidate duration off the timing grid"));
        }
        let mut schedule = StepSchedule::nominal(cfg, stance);
        schedule.durations[0] = d;
        let mut planner = Planner::new(*cfg, params)?;
        let input = PlanInput {
            state,
            swing_pos: [state.u_x, -state.u_y, T::zero()],
            schedule: &schedule,
            obstacles,
            xdot_ref,
            ydot_ref,
            time: T::zero(),
            flags,
        };
        let plan = planner.plan_base(&input)?;
        out.push(foothold_error(
            cfg,
            &params,
            xdot_ref,
            ydot_ref,
            schedule.stance_sides[1],
            &plan,
        )?);
    }
    Ok(out)
}
