//! Obstacle geometry: swept ellipses, tangent half-spaces, and foothold
//! regions.
//!
//! Moving obstacles are modelled as disks with constant velocity. For
//! avoidance over a planning horizon the disk's sweep is bounded by an
//! ellipse whose major axis follows the velocity; linearizing that ellipse
//! at the closest boundary point yields the separating half-space the
//! planner uses. Ground obstacles additionally induce axis-aligned foothold
//! regions around their inflated footprint.

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::scalar::{c, Real};

/// A disk obstacle moving at constant velocity. `height` and
/// `footprint_halfwidth` describe ground obstacles that feet must clear;
/// a zero `footprint_halfwidth` marks a body-level obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle<T> {
    pub center: Vec2<T>,
    pub velocity: Vec2<T>,
    pub radius: T,
    pub height: T,
    pub footprint_halfwidth: T,
}

impl<T: Real> Obstacle<T> {
    /// Center position after `t` seconds of constant-velocity motion.
    pub fn position_at(&self, t: T) -> Vec2<T> {
        self.center.add(self.velocity.scale(t))
    }

    /// Ground obstacles are stepped over or around rather than dodged.
    pub fn is_ground(&self) -> bool {
        self.footprint_halfwidth > T::zero()
    }
}

/// Axis-aligned ellipse in a rotated frame: semi-axes `a >= b > 0` with the
/// major axis rotated by `orientation` from world x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse<T> {
    pub center: Vec2<T>,
    pub a: T,
    pub b: T,
    pub orientation: T,
}

impl<T: Real> Ellipse<T> {
    pub fn new(center: Vec2<T>, a: T, b: T, orientation: T) -> Result<Self> {
        if b <= T::zero() || a < b {
            return Err(Error::Domain("ellipse semi-axes must satisfy a >= b > 0"));
        }
        Ok(Self {
            center,
            a,
            b,
            orientation,
        })
    }

    /// Bounding ellipse of a disk swept over `horizon` seconds: centered on
    /// the midpoint of the sweep, major semi-axis `radius + |v| h / 2` along
    /// the velocity, minor semi-axis `radius`. A static disk yields its own
    /// circle.
    pub fn swept(obstacle: &Obstacle<T>, horizon: T) -> Result<Self> {
        if obstacle.radius <= T::zero() {
            return Err(Error::Domain("obstacle radius must be positive"));
        }
        if horizon < T::zero() {
            return Err(Error::Domain("sweep horizon must be non-negative"));
        }
        let half = c::<T>(0.5);
        let speed = obstacle.velocity.norm();
        let center = obstacle.center.add(obstacle.velocity.scale(horizon * half));
        let a = obstacle.radius + speed * horizon * half;
        let orientation = if speed > T::zero() {
            obstacle.velocity.y.atan2(obstacle.velocity.x)
        } else {
            T::zero()
        };
        Self::new(center, a, obstacle.radius, orientation)
    }

    /// Point on the boundary at parameter angle `theta`.
    pub fn boundary_point(&self, theta: T) -> Vec2<T> {
        let local = Vec2::new(self.a * theta.cos(), self.b * theta.sin());
        self.center.add(local.rotate(self.orientation))
    }

    fn to_local(&self, p: Vec2<T>) -> Vec2<T> {
        p.sub(self.center).rotate(-self.orientation)
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        let q = self.to_local(p);
        let sx = q.x / self.a;
        let sy = q.y / self.b;
        sx * sx + sy * sy <= T::one()
    }

    /// Closest boundary point to an exterior query and the outward unit
    /// normal there. Errors with [`Error::InsideEllipse`] when the query is
    /// inside or on the boundary center.
    ///
    /// The projection solves the stationarity condition
    /// `x = a^2 q_x / (a^2 + t)`, `y = b^2 q_y / (b^2 + t)` for the unique
    /// multiplier `t >= 0` with `(x/a)^2 + (y/b)^2 = 1`, found by bisection.
    pub fn closest_point(&self, p: Vec2<T>) -> Result<(Vec2<T>, Vec2<T>)> {
        if self.contains(p) {
            return Err(Error::InsideEllipse);
        }
        let q = self.to_local(p);
        let qx = q.x.abs();
        let qy = q.y.abs();
        let a2 = self.a * self.a;
        let b2 = self.b * self.b;
        let f = |t: T| {
            let u = self.a * qx / (a2 + t);
            let v = self.b * qy / (b2 + t);
            u * u + v * v - T::one()
        };
        let mut lo = T::zero();
        let mut hi = self.a * q.norm() + a2;
        while f(hi) > T::zero() {
            hi = hi * c::<T>(2.0);
        }
        let tol = c::<T>(1e-12);
        for _ in 0..200 {
            if hi - lo <= tol * (T::one() + hi.abs()) {
                break;
            }
            let mid = (lo + hi) * c::<T>(0.5);
            if f(mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = (lo + hi) * c::<T>(0.5);
        let local = Vec2::new(
            (a2 * qx / (a2 + t)).copysign(q.x),
            (b2 * qy / (b2 + t)).copysign(q.y),
        );
        let grad = Vec2::new(local.x / a2, local.y / b2);
        let normal = grad.unit(c(1e-30))?.rotate(self.orientation);
        Ok((self.center.add(local.rotate(self.orientation)), normal))
    }
}

/// Convex polygonal region as unit-norm rows `n . p <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct FootRegion<T> {
    pub rows: Vec<(Vec2<T>, T)>,
}

impl<T: Real> FootRegion<T> {
    pub fn contains(&self, p: Vec2<T>, tol: T) -> bool {
        self.rows.iter().all(|&(n, rhs)| n.dot(p) <= rhs + tol)
    }

    /// Smallest row margin `rhs - n . p`; non-negative inside.
    pub fn clearance(&self, p: Vec2<T>) -> T {
        self.rows
            .iter()
            .map(|&(n, rhs)| rhs - n.dot(p))
            .fold(T::infinity(), |m, v| if v < m { v } else { m })
    }
}

/// Four axis-aligned rectangles around an inflated square footprint at
/// `center`: ahead of it, behind it, and to either side, each extending to
/// `outer` from the center. Their union is exactly the outer box minus the
/// open inflated square.
pub fn quadrant_regions<T: Real>(
    center: Vec2<T>,
    inflated_halfwidth: T,
    outer: T,
) -> Result<[FootRegion<T>; 4]> {
    if inflated_halfwidth <= T::zero() || outer <= inflated_halfwidth {
        return Err(Error::Domain(
            "regions need 0 < inflated halfwidth < outer extent",
        ));
    }
    let one = T::one();
    let zero = T::zero();
    let w = inflated_halfwidth;
    let xp = Vec2::new(one, zero);
    let xm = Vec2::new(-one, zero);
    let yp = Vec2::new(zero, one);
    let ym = Vec2::new(zero, -one);
    let band = |keep: Vec2<T>, lo: T| FootRegion {
        rows: vec![
            // Past the inflated square along `keep`, inside the outer box.
            (keep.scale(-one), -lo),
            (keep, keep.dot(center) + outer),
            (keep.rotate(T::FRAC_PI_2()), keep.rotate(T::FRAC_PI_2()).dot(center) + outer),
            (
                keep.rotate(-T::FRAC_PI_2()),
                keep.rotate(-T::FRAC_PI_2()).dot(center) + outer,
            ),
        ],
    };
    Ok([
        band(xp, center.x + w),
        band(xm, -(center.x - w)),
        band(yp, center.y + w),
        band(ym, -(center.y - w)),
    ])
}

/// Signed distance from a point to an axis-aligned square of half-width `w`;
/// negative inside.
pub fn signed_distance_to_square<T: Real>(p: Vec2<T>, center: Vec2<T>, w: T) -> T {
    let dx = (p.x - center.x).abs() - w;
    let dy = (p.y - center.y).abs() - w;
    if dx > T::zero() || dy > T::zero() {
        let ox = if dx > T::zero() { dx } else { T::zero() };
        let oy = if dy > T::zero() { dy } else { T::zero() };
        (ox * ox + oy * oy).sqrt()
    } else if dx > dy {
        dx
    } else {
        dy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk(cx: f64, cy: f64, vx: f64, vy: f64, r: f64) -> Obstacle<f64> {
        Obstacle {
            center: Vec2::new(cx, cy),
            velocity: Vec2::new(vx, vy),
            radius: r,
            height: 0.0,
            footprint_halfwidth: 0.0,
        }
    }

    #[test]
    fn static_sweep_is_the_circle() {
        let e = Ellipse::swept(&disk(1.0, 2.0, 0.0, 0.0, 0.5), 1.6).unwrap();
        assert_eq!(e.a, 0.5);
        assert_eq!(e.b, 0.5);
        assert_eq!(e.center, Vec2::new(1.0, 2.0));
    }

    #[test]
    fn sweep_follows_the_velocity() {
        let e = Ellipse::swept(&disk(0.0, 0.0, 0.0, -2.0, 0.5), 1.0).unwrap();
        assert!((e.center.x - 0.0).abs() < 1e-15);
        assert!((e.center.y + 1.0).abs() < 1e-15);
        assert!((e.a - 1.5).abs() < 1e-15);
        assert_eq!(e.b, 0.5);
        assert!((e.orientation + std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn sweep_spans_the_motion() {
        let o = disk(0.3, -0.2, 1.0, 0.7, 0.4);
        let h = 1.6;
        let e = Ellipse::swept(&o, h).unwrap();
        let dir = o.velocity.unit(1e-12).unwrap();
        // Extreme points of the sweep along the axis sit on the boundary.
        let implicit = |p: Vec2<f64>| {
            let q = p.sub(e.center).rotate(-e.orientation);
            (q.x / e.a).powi(2) + (q.y / e.b).powi(2)
        };
        let tail = o.position_at(0.0).sub(dir.scale(o.radius));
        let nose = o.position_at(h).add(dir.scale(o.radius));
        assert!((implicit(tail) - 1.0).abs() < 1e-12);
        assert!((implicit(nose) - 1.0).abs() < 1e-12);
        // Every disk center along the path stays inside.
        for k in 0..=16 {
            let t = h * k as f64 / 16.0;
            assert!(e.contains(o.position_at(t)));
        }
        // Lateral extent at the midpoint is exactly the radius.
        let side = Vec2::new(-dir.y, dir.x);
        let mid = o.position_at(0.5 * h);
        assert!((implicit(mid.add(side.scale(o.radius))) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closest_point_on_circle_is_radial() {
        let e = Ellipse::<f64>::new(Vec2::new(1.0, 1.0), 0.5, 0.5, 0.3).unwrap();
        let (p, n) = e.closest_point(Vec2::new(3.0, 1.0)).unwrap();
        assert!((p.x - 1.5).abs() < 1e-9);
        assert!(p.y.abs() - 1.0 < 1e-9);
        assert!((n.x - 1.0).abs() < 1e-9);
        assert!(n.y.abs() < 1e-9);
    }

    #[test]
    fn closest_point_on_axes() {
        let e = Ellipse::<f64>::new(Vec2::zero(), 2.0, 1.0, 0.0).unwrap();
        let (p, n) = e.closest_point(Vec2::new(5.0, 0.0)).unwrap();
        assert!((p.x - 2.0).abs() < 1e-9 && p.y.abs() < 1e-12);
        assert!((n.x - 1.0).abs() < 1e-9);
        let (p, _) = e.closest_point(Vec2::new(0.0, -4.0)).unwrap();
        assert!(p.x.abs() < 1e-12 && (p.y + 1.0).abs() < 1e-9);
    }

    #[test]
    fn interior_query_is_rejected() {
        let e = Ellipse::<f64>::new(Vec2::zero(), 2.0, 1.0, 0.4).unwrap();
        assert!(matches!(
            e.closest_point(Vec2::new(0.1, 0.1)),
            Err(Error::InsideEllipse)
        ));
        assert!(matches!(
            e.closest_point(Vec2::zero()),
            Err(Error::InsideEllipse)
        ));
    }

    #[test]
    fn tangent_halfspace_separates_query_from_boundary() {
        let e = Ellipse::<f64>::new(Vec2::new(0.5, -0.3), 1.8, 0.6, 0.7).unwrap();
        let q = Vec2::new(3.0, 1.5);
        let (xc, n) = e.closest_point(q).unwrap();
        let rhs = n.dot(xc);
        assert!(n.dot(q) >= rhs - 1e-12);
        for k in 0..1024 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 1024.0;
            assert!(n.dot(e.boundary_point(th)) <= rhs + 1e-9);
        }
    }

    #[test]
    fn quadrant_regions_tile_the_safe_set() {
        let regions = quadrant_regions::<f64>(Vec2::new(2.0, -1.0), 0.2, 10.0).unwrap();
        for r in &regions {
            assert_eq!(r.rows.len(), 4);
            for &(n, _) in &r.rows {
                assert!((n.norm() - 1.0).abs() < 1e-12);
            }
        }
        let mut saw_covered = false;
        for i in -30..=30 {
            for j in -30..=30 {
                let p = Vec2::new(2.0 + i as f64 * 0.05, -1.0 + j as f64 * 0.05);
                let hits = regions.iter().filter(|r| r.contains(p, 1e-12)).count();
                let inside_square =
                    (p.x - 2.0).abs() < 0.2 - 1e-9 && (p.y + 1.0).abs() < 0.2 - 1e-9;
                if inside_square {
                    assert_eq!(hits, 0, "inflated square point covered at {p:?}");
                } else {
                    assert!(hits >= 1, "safe point uncovered at {p:?}");
                    saw_covered = true;
                }
            }
        }
        assert!(saw_covered);
    }

    #[test]
    fn region_clearance_sign() {
        let regions = quadrant_regions::<f64>(Vec2::zero(), 0.2, 10.0).unwrap();
        assert!(regions[0].clearance(Vec2::new(0.5, 0.0)) > 0.0);
        assert!(regions[0].clearance(Vec2::new(0.1, 0.0)) < 0.0);
        assert!((regions[0].clearance(Vec2::new(0.2, 0.0))).abs() < 1e-12);
    }

    #[test]
    fn square_distance_cases() {
        let cen = Vec2::<f64>::new(1.0, 1.0);
        assert!((signed_distance_to_square(Vec2::new(2.0, 1.0), cen, 0.5) - 0.5).abs() < 1e-12);
        let d = signed_distance_to_square(Vec2::new(2.0, 2.0), cen, 0.5);
        assert!((d - (2.0f64 * 0.25).sqrt()).abs() < 1e-12);
        assert!((signed_distance_to_square(Vec2::new(1.0, 1.2), cen, 0.5) + 0.3).abs() < 1e-12);
        assert!((signed_distance_to_square(cen, cen, 0.5) + 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn closest_point_beats_a_boundary_sweep(
            cx in -2.0..2.0f64, cy in -2.0..2.0f64,
            a in 0.3..2.5f64, brel in 0.1..1.0f64,
            rot in -3.2..3.2f64,
            qr in 1.0..4.0f64, qth in 0.0..6.3f64,
        ) {
            let b = a * brel;
            let e = Ellipse::new(Vec2::new(cx, cy), a, b, rot).unwrap();
            // Query placed outside by construction: radial distance beyond a.
            let q = Vec2::new(cx + (a + qr) * qth.cos(), cy + (a + qr) * qth.sin());
            let (xc, n) = e.closest_point(q).unwrap();
            let local = xc.sub(e.center).rotate(-rot);
            let on = (local.x / a).powi(2) + (local.y / b).powi(2);
            prop_assert!((on - 1.0).abs() < 1e-7);
            prop_assert!((n.norm() - 1.0).abs() < 1e-9);
            let best = q.sub(xc).norm();
            for k in 0..4096 {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 4096.0;
                let d = q.sub(e.boundary_point(th)).norm();
                prop_assert!(best <= d + 1e-5);
            }
        }

        #[test]
        fn regions_exclude_exactly_the_inflated_square(
            px in -3.0..3.0f64, py in -3.0..3.0f64,
        ) {
            let p = Vec2::new(px, py);
            let regions = quadrant_regions::<f64>(Vec2::zero(), 0.2, 10.0).unwrap();
            let hits = regions.iter().filter(|r| r.contains(p, 0.0)).count();
            let inside = px.abs() < 0.2 && py.abs() < 0.2;
            if inside {
                prop_assert_eq!(hits, 0);
            } else {
                prop_assert!(hits >= 1);
            }
        }
    }
}
