//! Linear inverted pendulum dynamics and periodic gait references.
//!
//! The planar model keeps the center of mass at constant height `z0`, giving
//! per-axis dynamics `a = omega0^2 (p - u)` about the active foothold `u`,
//! with `omega0 = sqrt(g / z0)`. Closed-form solutions are
//! `p(t) = c1 e^{omega t} + c2 e^{-omega t} + u`, which this module uses both
//! to propagate exactly and to solve the boundary-value problems that define
//! steady walking in each plane.

use crate::error::{Error, Result};
use crate::linalg::{solve3, Vec2};
use crate::scalar::{c, Real};

/// Which foot is in stance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Lateral sign convention: left is +y.
    pub fn sign<T: Real>(self) -> T {
        match self {
            Side::Left => T::one(),
            Side::Right => -T::one(),
        }
    }
}

/// Pendulum constants. `omega0` is derived in the constructor and kept
/// consistent with `z0` and `g` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipmParams<T> {
    z0: T,
    g: T,
    omega0: T,
}

impl<T: Real> LipmParams<T> {
    pub fn new(z0: T, g: T) -> Result<Self> {
        Ok(Self {
            z0,
            g,
            omega0: natural_frequency(z0, g)?,
        })
    }

    pub fn z0(&self) -> T {
        self.z0
    }

    pub fn g(&self) -> T {
        self.g
    }

    pub fn omega0(&self) -> T {
        self.omega0
    }
}

impl<T: Real> Default for LipmParams<T> {
    /// Nominal humanoid values: 0.9 m center-of-mass height, standard gravity.
    fn default() -> Self {
        Self::new(c(0.9), c(9.81)).unwrap()
    }
}

/// Planar center-of-mass state plus the active foothold.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LipmState<T> {
    pub x: T,
    pub y: T,
    pub xdot: T,
    pub ydot: T,
    pub u_x: T,
    pub u_y: T,
}

impl<T: Real> LipmState<T> {
    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2<T> {
        Vec2::new(self.xdot, self.ydot)
    }

    pub fn foothold(&self) -> Vec2<T> {
        Vec2::new(self.u_x, self.u_y)
    }
}

/// One-axis steady-gait reference over a single step, expressed in the
/// step-local frame where the position starts at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGaitRef<T> {
    pub c1: T,
    pub c2: T,
    /// Foothold offset for the step, in the step-local frame.
    pub u_bar: T,
    /// Commanded drift velocity along this axis.
    pub xdot_ref: T,
    pub t_step: T,
    omega0: T,
}

impl<T: Real> PeriodicGaitRef<T> {
    pub fn omega0(&self) -> T {
        self.omega0
    }

    /// Position at time `t` into the step.
    pub fn position(&self, t: T) -> T {
        let w = self.omega0;
        self.c1 * (w * t).exp() + self.c2 * (-w * t).exp() + self.u_bar
    }

    /// Velocity at time `t` into the step.
    pub fn velocity(&self, t: T) -> T {
        let w = self.omega0;
        w * (self.c1 * (w * t).exp() - self.c2 * (-w * t).exp())
    }

    /// Position relative to the stance foothold at the end of the step; the
    /// natural tracking target for a foothold-relative cost at step
    /// transitions.
    pub fn end_offset(&self) -> T {
        self.position(self.t_step) - self.u_bar
    }
}

/// `omega0 = sqrt(g / z0)`; errors on non-positive height or gravity.
pub fn natural_frequency<T: Real>(z0: T, g: T) -> Result<T> {
    if z0 <= T::zero() {
        return Err(Error::Domain("pendulum height must be positive"));
    }
    if g <= T::zero() {
        return Err(Error::Domain("gravity must be positive"));
    }
    Ok((g / z0).sqrt())
}

/// Forward-walking reference: one step of duration `t_step` that repeats
/// exactly, starting from position zero with velocity `xdot_ref`.
///
/// The three conditions are end-velocity periodicity, the commanded start
/// velocity, and the zero start position; they form a linear system in
/// `(c1, c2, u_bar)`.
pub fn solve_periodic_sagittal<T: Real>(
    params: &LipmParams<T>,
    xdot_ref: T,
    t_step: T,
) -> Result<PeriodicGaitRef<T>> {
    if t_step <= T::zero() {
        return Err(Error::Domain("step duration must be positive"));
    }
    let w = params.omega0();
    let e = (w * t_step).exp();
    let one = T::one();
    let zero = T::zero();
    // Rows: vdot(0) - vdot(T) = 0; vdot(0) = xdot_ref; x(0) = 0.
    let a = [
        [w * (one - e), -w * (one - e.recip()), zero],
        [w, -w, zero],
        [one, one, one],
    ];
    let sol = solve3(a, [zero, xdot_ref, zero])?;
    Ok(PeriodicGaitRef {
        c1: sol[0],
        c2: sol[1],
        u_bar: sol[2],
        xdot_ref,
        t_step,
        omega0: w,
    })
}

/// Lateral reference: the sway of a gait with step width `step_width` under
/// stance `side`, with an optional drift `ydot_ref` superposed.
///
/// With zero drift the solution is anti-periodic (`v(0) = -v(t_step)`), so
/// mirroring it reproduces the other stance side; consecutive footholds land
/// `step_width` apart. Drift enters exactly as the sagittal solve does and
/// adds linearly.
pub fn solve_periodic_frontal<T: Real>(
    params: &LipmParams<T>,
    ydot_ref: T,
    step_width: T,
    t_step: T,
    side: Side,
) -> Result<PeriodicGaitRef<T>> {
    if t_step <= T::zero() {
        return Err(Error::Domain("step duration must be positive"));
    }
    if step_width < T::zero() {
        return Err(Error::Domain("step width must be non-negative"));
    }
    let w = params.omega0();
    let e = (w * t_step).exp();
    let one = T::one();
    let zero = T::zero();
    let two = c::<T>(2.0);
    // Rows: y(0) = 0; vdot(0) + vdot(T) = 2 ydot_ref (anti-periodic sway about
    // the drift); 2 u_bar - y(T) = sign * step_width (consecutive footholds a
    // step width apart).
    let a = [
        [one, one, one],
        [w * (one + e), -w * (one + e.recip()), zero],
        [-e, -e.recip(), one],
    ];
    let rhs = [zero, two * ydot_ref, side.sign::<T>() * step_width];
    let sol = solve3(a, rhs)?;
    Ok(PeriodicGaitRef {
        c1: sol[0],
        c2: sol[1],
        u_bar: sol[2],
        xdot_ref: ydot_ref,
        t_step,
        omega0: w,
    })
}

/// Forward-Euler discretization of the planar model with state
/// `[x, xdot, y, ydot]` and input `[u_x, u_y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteModel<T> {
    pub a: [[T; 4]; 4],
    pub b: [[T; 2]; 4],
    pub dt: T,
}

/// Single forward-Euler step matrices: `q_next = A q + B u`.
pub fn discretize<T: Real>(params: &LipmParams<T>, dt: T) -> Result<DiscreteModel<T>> {
    if dt < T::zero() {
        return Err(Error::Domain("time step must be non-negative"));
    }
    let w2 = params.omega0() * params.omega0();
    let one = T::one();
    let zero = T::zero();
    let a = [
        [one, dt, zero, zero],
        [w2 * dt, one, zero, zero],
        [zero, zero, one, dt],
        [zero, zero, w2 * dt, one],
    ];
    let b = [
        [zero, zero],
        [-w2 * dt, zero],
        [zero, zero],
        [zero, -w2 * dt],
    ];
    Ok(DiscreteModel { a, b, dt })
}

/// Exact flow of the pendulum about a fixed foothold for `dt` seconds. The
/// returned state carries `foothold` as its active foothold.
pub fn propagate_exact<T: Real>(
    params: &LipmParams<T>,
    state: &LipmState<T>,
    foothold: Vec2<T>,
    dt: T,
) -> Result<LipmState<T>> {
    if dt < T::zero() {
        return Err(Error::Domain("time step must be non-negative"));
    }
    let w = params.omega0();
    let ch = (w * dt).cosh();
    let sh = (w * dt).sinh();
    let flow = |p: T, v: T, u: T| -> (T, T) {
        let d = p - u;
        (u + d * ch + v / w * sh, d * w * sh + v * ch)
    };
    let (x, xdot) = flow(state.x, state.xdot, foothold.x);
    let (y, ydot) = flow(state.y, state.ydot, foothold.y);
    Ok(LipmState {
        x,
        y,
        xdot,
        ydot,
        u_x: foothold.x,
        u_y: foothold.y,
    })
}

/// Per-axis orbital energy `v^2/2 - omega0^2 (p - u)^2 / 2`, an invariant of
/// the exact flow about a fixed foothold.
pub fn orbital_energy<T: Real>(params: &LipmParams<T>, p: T, v: T, u: T) -> T {
    let w = params.omega0();
    let d = p - u;
    (v * v - w * w * d * d) * c::<T>(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LipmParams<f64> {
        LipmParams::new(0.9, 9.81).unwrap()
    }

    #[test]
    fn natural_frequency_values_and_domain() {
        assert_eq!(natural_frequency(1.0, 1.0).unwrap(), 1.0);
        let w = natural_frequency(0.9, 9.81).unwrap();
        assert!((w - (9.81f64 / 0.9).sqrt()).abs() < 1e-15);
        assert!((w - 3.3015).abs() < 1e-4);
        assert!(natural_frequency(0.0, 9.81).is_err());
        assert!(natural_frequency(-1.0, 9.81).is_err());
        assert!(natural_frequency(0.9, 0.0).is_err());
    }

    #[test]
    fn sagittal_matches_closed_form() {
        let p = params();
        let w = p.omega0();
        let r = solve_periodic_sagittal(&p, 0.5, 0.4).unwrap();
        // Eliminating the linear system by hand gives
        // u_bar = (v / w) tanh(w T / 2).
        let closed = 0.5 / w * (w * 0.2).tanh();
        assert!((r.u_bar - closed).abs() < 1e-12);
        assert!((r.u_bar - 0.0876).abs() < 1e-4);
    }

    #[test]
    fn sagittal_zero_command_is_rest() {
        let r = solve_periodic_sagittal(&params(), 0.0, 0.4).unwrap();
        assert_eq!(r.c1, 0.0);
        assert_eq!(r.c2, 0.0);
        assert_eq!(r.u_bar, 0.0);
    }

    #[test]
    fn sagittal_is_odd_in_the_command() {
        let rf = solve_periodic_sagittal(&params(), 0.7, 0.4).unwrap();
        let rb = solve_periodic_sagittal(&params(), -0.7, 0.4).unwrap();
        assert!((rf.u_bar + rb.u_bar).abs() < 1e-15);
        assert!((rf.c1 + rb.c1).abs() < 1e-15);
        assert!((rf.c2 + rb.c2).abs() < 1e-15);
    }

    #[test]
    fn sagittal_boundary_residuals() {
        let p = params();
        for &v in &[-1.0, -0.3, 0.0, 0.4, 0.9] {
            for &t in &[0.2, 0.3, 0.4, 0.5] {
                let r = solve_periodic_sagittal(&p, v, t).unwrap();
                assert!(r.position(0.0).abs() < 1e-9);
                assert!((r.velocity(0.0) - v).abs() < 1e-9);
                assert!((r.velocity(t) - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frontal_sway_is_anti_periodic() {
        let p = params();
        let r = solve_periodic_frontal(&p, 0.0, 0.3, 0.4, Side::Left).unwrap();
        assert!(r.position(0.0).abs() < 1e-9);
        assert!((r.velocity(0.0) + r.velocity(0.4)).abs() < 1e-9);
        // Step width shows up as the foothold offset of half a width.
        assert!((r.u_bar - 0.15).abs() < 1e-12);
    }

    #[test]
    fn frontal_mirrors_between_sides() {
        let p = params();
        let l = solve_periodic_frontal(&p, 0.0, 0.3, 0.4, Side::Left).unwrap();
        let r = solve_periodic_frontal(&p, 0.0, 0.3, 0.4, Side::Right).unwrap();
        assert!((l.u_bar + r.u_bar).abs() < 1e-15);
        assert!((l.c1 + r.c1).abs() < 1e-15);
        assert!((l.c2 + r.c2).abs() < 1e-15);
    }

    #[test]
    fn frontal_degenerates_to_zero_width() {
        let r = solve_periodic_frontal(&params(), 0.0, 0.0, 0.4, Side::Left).unwrap();
        assert_eq!(r.u_bar, 0.0);
        assert_eq!(r.c1, 0.0);
        assert_eq!(r.c2, 0.0);
    }

    #[test]
    fn frontal_drift_superposes_with_sway() {
        let p = params();
        let both = solve_periodic_frontal(&p, 0.2, 0.3, 0.4, Side::Left).unwrap();
        let sway = solve_periodic_frontal(&p, 0.0, 0.3, 0.4, Side::Left).unwrap();
        let drift = solve_periodic_sagittal(&p, 0.2, 0.4).unwrap();
        assert!((both.c1 - (sway.c1 + drift.c1)).abs() < 1e-12);
        assert!((both.c2 - (sway.c2 + drift.c2)).abs() < 1e-12);
        assert!((both.u_bar - (sway.u_bar + drift.u_bar)).abs() < 1e-12);
    }

    #[test]
    fn discretize_entries() {
        let p = params();
        let m = discretize(&p, 0.02).unwrap();
        assert_eq!(m.a[0][1], 0.02);
        assert_eq!(m.a[2][3], 0.02);
        let w2 = p.omega0() * p.omega0();
        assert!((m.a[1][0] - w2 * 0.02).abs() < 1e-15);
        assert!((m.b[1][0] + w2 * 0.02).abs() < 1e-15);

        // One Euler step from x = 0.1 at rest, foothold at the origin.
        let vkick = m.a[1][0] * 0.1;
        assert!((vkick - 0.0218).abs() < 1e-4);

        let id = discretize(&p, 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(id.a[i][j], if i == j { 1.0 } else { 0.0 });
            }
            assert_eq!(id.b[i][0], 0.0);
            assert_eq!(id.b[i][1], 0.0);
        }
    }

    #[test]
    fn propagate_fixes_equilibrium() {
        let p = params();
        let s = LipmState {
            x: 0.3,
            y: -0.1,
            xdot: 0.0,
            ydot: 0.0,
            u_x: 0.3,
            u_y: -0.1,
        };
        let out = propagate_exact(&p, &s, Vec2::new(0.3, -0.1), 0.7).unwrap();
        assert!((out.x - 0.3).abs() < 1e-12);
        assert!((out.y + 0.1).abs() < 1e-12);
        assert!(out.xdot.abs() < 1e-12);
        assert!(out.ydot.abs() < 1e-12);
    }

    #[test]
    fn propagate_semigroup_property() {
        let p = params();
        let s = LipmState {
            x: 0.1,
            y: -0.2,
            xdot: 0.4,
            ydot: 0.1,
            u_x: 0.0,
            u_y: 0.05,
        };
        let u = Vec2::new(0.0, 0.05);
        let full = propagate_exact(&p, &s, u, 0.4).unwrap();
        let half = propagate_exact(&p, &s, u, 0.2).unwrap();
        let two = propagate_exact(&p, &half, u, 0.2).unwrap();
        assert!((full.x - two.x).abs() < 1e-12);
        assert!((full.xdot - two.xdot).abs() < 1e-12);
        assert!((full.y - two.y).abs() < 1e-12);
        assert!((full.ydot - two.ydot).abs() < 1e-12);
    }

    #[test]
    fn propagate_conserves_orbital_energy() {
        let p = params();
        let mut s = LipmState {
            x: 0.12,
            y: -0.05,
            xdot: 0.5,
            ydot: -0.2,
            u_x: 0.02,
            u_y: 0.1,
        };
        let u = Vec2::new(0.02, 0.1);
        let e0 = orbital_energy(&p, s.x, s.xdot, u.x);
        for _ in 0..50 {
            s = propagate_exact(&p, &s, u, 0.008).unwrap();
            let e = orbital_energy(&p, s.x, s.xdot, u.x);
            assert!((e - e0).abs() < 1e-9);
        }
    }
}
