//! Air-to-ground channel model.
//!
//! Pathloss is free-space loss plus an excess loss that mixes the LoS and
//! NLoS excess terms, weighted by a sigmoid LoS probability in the elevation
//! angle:
//!
//! ```text
//! P_LoS(θ) = 1 / (1 + a·exp(−b·(θ − a)))            θ in degrees
//! L(r, h)  = 20·log10(4π·d·f/c) + P_LoS·η_LoS + (1 − P_LoS)·η_NLoS,  d = √(r² + h²)
//! ```
//!
//! A user is covered when `L ≤ γ`. For a fixed altitude the covered region is
//! a closed disk; [`max_coverage_radius`] finds the elevation angle that makes
//! that disk as large as possible.

use crate::{Error, Position, Result, UavPose};

/// Propagation speed used in the free-space term.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Environment constants and the coverage threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub a: f64,
    pub b: f64,
    pub eta_los_db: f64,
    pub eta_nlos_db: f64,
    pub carrier_hz: f64,
    /// Maximum pathloss (dB) at which a user counts as covered.
    pub gamma_db: f64,
}

impl Default for ChannelParams {
    /// Urban environment at 2 GHz with a threshold that yields r_max ≈ 298 m.
    fn default() -> Self {
        Self {
            a: 9.61,
            b: 0.16,
            eta_los_db: 1.0,
            eta_nlos_db: 20.0,
            carrier_hz: 2.0e9,
            gamma_db: 92.5,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad(format!("channel.a must be > 0, got {}", self.a));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("channel.b must be > 0, got {}", self.b));
        }
        if !(self.eta_los_db >= 0.0 && self.eta_nlos_db >= self.eta_los_db && self.eta_nlos_db.is_finite()) {
            return bad(format!(
                "need 0 <= eta_los_db <= eta_nlos_db, got {} and {}",
                self.eta_los_db, self.eta_nlos_db
            ));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return bad(format!("channel.carrier_hz must be > 0, got {}", self.carrier_hz));
        }
        let floor = self.fspl_db(1.0);
        if !(self.gamma_db > floor && self.gamma_db.is_finite()) {
            return bad(format!(
                "channel.gamma_db = {} must exceed the 1 m free-space loss {floor:.4} dB",
                self.gamma_db
            ));
        }
        Ok(())
    }

    /// Free-space loss at slant distance `d` metres.
    pub fn fspl_db(&self, d: f64) -> f64 {
        20.0 * (4.0 * std::f64::consts::PI * d * self.carrier_hz / SPEED_OF_LIGHT).log10()
    }

    /// Expected excess loss at elevation `elevation_deg`, without domain checks.
    fn excess_db(&self, elevation_deg: f64) -> f64 {
        let p = sigmoid_los(elevation_deg, self);
        p * self.eta_los_db + (1.0 - p) * self.eta_nlos_db
    }
}

#[inline]
fn sigmoid_los(elevation_deg: f64, p: &ChannelParams) -> f64 {
    1.0 / (1.0 + p.a * (-p.b * (elevation_deg - p.a)).exp())
}

/// Elevation angle in degrees of a UAV at altitude `h` seen from horizontal
/// distance `horizontal_m`.
pub fn elevation_deg(horizontal_m: f64, h: f64) -> f64 {
    h.atan2(horizontal_m).to_degrees()
}

/// LoS probability at an elevation angle in `(0, 90]` degrees.
pub fn los_probability(elevation_deg: f64, p: &ChannelParams) -> Result<f64> {
    if !(elevation_deg > 0.0 && elevation_deg <= 90.0) {
        return Err(Error::Domain(format!(
            "elevation angle {elevation_deg} deg outside (0, 90]"
        )));
    }
    Ok(sigmoid_los(elevation_deg, p))
}

/// Mean pathloss in dB between a UAV at altitude `h` and a ground user at
/// horizontal distance `horizontal_m`.
pub fn pathloss_db(horizontal_m: f64, h: f64, p: &ChannelParams) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("altitude must be > 0, got {h}")));
    }
    if !(horizontal_m >= 0.0) {
        return Err(Error::Domain(format!(
            "horizontal distance must be >= 0, got {horizontal_m}"
        )));
    }
    Ok(pathloss_unchecked(horizontal_m, h, p))
}

#[inline]
fn pathloss_unchecked(horizontal_m: f64, h: f64, p: &ChannelParams) -> f64 {
    let d = horizontal_m.hypot(h);
    p.fspl_db(d) + p.excess_db(elevation_deg(horizontal_m, h))
}

/// Largest coverage disk and the altitude that achieves it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageDisk {
    /// r_max: largest horizontal radius with pathloss ≤ γ.
    pub radius: f64,
    /// h_opt = r_max·tan(θ*).
    pub altitude: f64,
    /// θ*, the radius-maximising elevation angle in degrees.
    pub elevation_deg: f64,
}

/// Horizontal radius at which pathloss equals γ along elevation `theta_deg`.
fn radius_at_elevation(theta_deg: f64, p: &ChannelParams) -> f64 {
    let d = 10f64.powf((p.gamma_db - p.excess_db(theta_deg) - p.fspl_db(1.0)) / 20.0);
    d * theta_deg.to_radians().cos()
}

const ELEVATION_TOL_DEG: f64 = 1e-6;

/// Finds θ* by golden-section search and returns the coverage disk.
///
/// The returned radius is adjusted to the largest double with
/// `pathloss_db(radius, altitude) ≤ γ`, so the disk is closed under the
/// same predicate that [`is_covered`] evaluates.
pub fn max_coverage_radius(p: &ChannelParams) -> Result<CoverageDisk> {
    p.validate()?;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-9, 90.0 - 1e-9);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = radius_at_elevation(x1, p);
    let mut f2 = radius_at_elevation(x2, p);
    while hi - lo > ELEVATION_TOL_DEG {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = radius_at_elevation(x2, p);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = radius_at_elevation(x1, p);
        }
    }
    let theta = 0.5 * (lo + hi);
    let mut radius = radius_at_elevation(theta, p);
    if !(radius >= 1.0) {
        return Err(Error::Domain(format!(
            "gamma_db = {} is infeasible: no elevation covers a user 1 m away",
            p.gamma_db
        )));
    }
    let altitude = radius * theta.to_radians().tan();

    // Snap to the exact floating-point boundary of the closed disk.
    while pathloss_unchecked(radius, altitude, p) > p.gamma_db {
        radius = radius.next_down();
    }
    while pathloss_unchecked(radius.next_up(), altitude, p) <= p.gamma_db {
        radius = radius.next_up();
    }
    Ok(CoverageDisk { radius, altitude, elevation_deg: theta })
}

/// Coverage indicator: pathloss from `pose` to `user` is at most γ.
pub fn is_covered(pose: &UavPose, user: &Position, p: &ChannelParams) -> bool {
    pose.h > 0.0 && pathloss_unchecked(pose.horizontal_dist(user), pose.h, p) <= p.gamma_db
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn urban() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn los_probability_at_zenith() {
        // 1/(1 + 9.61·e^(−0.16·80.39)) evaluated in f64.
        let expected = 1.0 / (1.0 + 9.61 * (-0.16f64 * 80.39).exp());
        let v = los_probability(90.0, &urban()).unwrap();
        assert_eq!(v, expected);
        assert!((v - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn los_probability_at_theta_equal_a() {
        let v = los_probability(9.61, &urban()).unwrap();
        assert!((v - 1.0 / 10.61).abs() < 1e-15);
        assert!((v - 0.09425).abs() < 1e-5);
    }

    #[test]
    fn los_probability_domain() {
        let p = urban();
        assert!(los_probability(30.0, &p).unwrap() < los_probability(60.0, &p).unwrap());
        assert!(matches!(los_probability(0.0, &p), Err(Error::Domain(_))));
        assert!(matches!(los_probability(90.5, &p), Err(Error::Domain(_))));
        assert!(matches!(los_probability(f64::NAN, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn pathloss_directly_below() {
        let p = urban();
        let fspl = 20.0 * (4.0 * std::f64::consts::PI * 1000.0 * 2e9 / 3e8).log10();
        assert!((fspl - 98.46).abs() < 0.005);
        let plos = 1.0 / (1.0 + 9.61 * (-0.16f64 * 80.39).exp());
        let l = pathloss_db(0.0, 1000.0, &p).unwrap();
        assert!((l - (fspl + plos + (1.0 - plos) * 20.0)).abs() < 1e-12);
        assert!((l - 99.46).abs() < 0.01);
    }

    #[test]
    fn pathloss_doubling_distance_adds_six_db() {
        let p = urban();
        let l1 = pathloss_db(300.0, 400.0, &p).unwrap();
        let l2 = pathloss_db(600.0, 800.0, &p).unwrap();
        assert!((l2 - l1 - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn pathloss_at_grazing_angle_approaches_nlos() {
        let p = urban();
        let l = pathloss_db(1000.0, 0.01, &p).unwrap();
        let fspl = p.fspl_db(1000.0f64.hypot(0.01));
        // θ ≈ 5.7e-4 deg: P_LoS = 1/(1 + 9.61·e^(0.16·9.61)) ≈ 0.0215
        let plos = 1.0 / (1.0 + 9.61 * (0.16f64 * (9.61 - elevation_deg(1000.0, 0.01))).exp());
        assert!((l - fspl - (plos + (1.0 - plos) * 20.0)).abs() < 1e-9);
        assert!(l - fspl > 19.5);
        assert!(matches!(pathloss_db(10.0, 0.0, &p), Err(Error::Domain(_))));
    }

    /// Exhaustive 0.01° sweep of the closed-form radius.
    fn sweep_best_elevation(p: &ChannelParams) -> (f64, f64) {
        (1..9000)
            .map(|i| i as f64 * 0.01)
            .map(|t| (t, radius_at_elevation(t, p)))
            .fold((0.0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    #[test]
    fn urban_optimal_elevation() {
        let p = urban();
        let disk = max_coverage_radius(&p).unwrap();
        let (sweep_theta, sweep_r) = sweep_best_elevation(&p);
        assert!((disk.elevation_deg - 42.44).abs() < 0.01, "{}", disk.elevation_deg);
        assert!((disk.elevation_deg - sweep_theta).abs() <= 0.01);
        assert!(disk.radius >= sweep_r - 1e-6);
        assert!((disk.radius - 298.155).abs() < 0.01, "{}", disk.radius);
        assert!((disk.altitude / disk.radius - disk.elevation_deg.to_radians().tan()).abs() < 1e-9);
        let l = pathloss_db(disk.radius, disk.altitude, &p).unwrap();
        assert!((l - p.gamma_db).abs() < 1e-6);
        assert!(l <= p.gamma_db);
    }

    #[test]
    fn six_db_more_threshold_doubles_radius() {
        let p = urban();
        let q = ChannelParams { gamma_db: p.gamma_db + 20.0 * 2f64.log10(), ..p };
        let d1 = max_coverage_radius(&p).unwrap();
        let d2 = max_coverage_radius(&q).unwrap();
        assert!((d2.radius / d1.radius - 2.0).abs() < 1e-9);
        assert!((d2.elevation_deg - d1.elevation_deg).abs() < 1e-5);
    }

    #[test]
    fn infeasible_threshold() {
        let p = urban();
        let below_floor = ChannelParams { gamma_db: p.fspl_db(1.0) - 1.0, ..p };
        assert!(max_coverage_radius(&below_floor).is_err());
        // Above the free-space floor but below what the excess loss allows at 1 m.
        let tight = ChannelParams { gamma_db: p.fspl_db(1.0) + 0.5, ..p };
        assert!(matches!(max_coverage_radius(&tight), Err(Error::Domain(_))));
    }

    #[test]
    fn coverage_boundary() {
        let p = urban();
        let disk = max_coverage_radius(&p).unwrap();
        let pose = UavPose::new(0.0, 1000.0, disk.altitude);
        assert!(is_covered(&pose, &Position::new(0.0, 1000.0), &p));
        assert!(is_covered(&pose, &Position::new(disk.radius, 1000.0), &p));
        assert!(!is_covered(&pose, &Position::new(disk.radius.next_up(), 1000.0), &p));
        assert!(!is_covered(&pose, &Position::new(disk.radius + 1.0, 1000.0), &p));
    }

    #[test]
    fn coverage_equals_disk_membership() {
        let p = urban();
        let disk = max_coverage_radius(&p).unwrap();
        let pose = UavPose::new(1000.0, 1000.0, disk.altitude);
        let mut rng = crate::rng::SplitMix64::new(42);
        for _ in 0..10_000 {
            let u = Position::new(rng.uniform(0.0, 2000.0), rng.uniform(0.0, 2000.0));
            assert_eq!(is_covered(&pose, &u, &p), pose.horizontal_dist(&u) <= disk.radius);
        }
    }

    proptest! {
        #[test]
        fn los_probability_is_increasing(t1 in 0.001f64..90.0, dt in 0.001f64..10.0) {
            let p = urban();
            let t2 = (t1 + dt).min(90.0);
            prop_assume!(t2 > t1);
            let v1 = los_probability(t1, &p).unwrap();
            let v2 = los_probability(t2, &p).unwrap();
            prop_assert!(v1 > 0.0 && v2 < 1.0 && v1 < v2);
        }

        #[test]
        fn distance_scaling_law(r in 1.0f64..2000.0, h in 1.0f64..1000.0, k in 1.01f64..8.0) {
            let p = urban();
            let l1 = pathloss_db(r, h, &p).unwrap();
            let l2 = pathloss_db(k * r, k * h, &p).unwrap();
            let want = 20.0 * k.log10();
            prop_assert!(((l2 - l1) - want).abs() <= 1e-9 * want.max(1.0));
        }
    }
}
