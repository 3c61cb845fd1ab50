//! Geometric world: a BS at the origin, one mobile UE and a set of fixed
//! far-scatterer groups, each with a circular visible region.
//!
//! The generator keeps large-scale parameters (geometry, per-cluster shadow
//! factors) continuous over an episode and redraws fast fading at every
//! snapshot from a counter-keyed stream, so a state plus its step index fully
//! determine the path set.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ClusterSpec, SystemConfig};
use crate::units;

/// Smallest distance used in the pathloss formula.
pub const MIN_DISTANCE_M: f64 = 1.0;

const MAX_REFLECTIONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeMotion {
    pub position: [f64; 2],
    pub speed: f64,
    pub accel: f64,
    /// Direction of travel, radians.
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererGroup {
    pub center: [f64; 2],
    /// Log-normal shadowing of this group, dB.
    pub shadow_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub seed: u64,
    /// Number of `advance` calls applied since initialization.
    pub step: usize,
    pub ue: UeMotion,
    pub groups: Vec<ScattererGroup>,
    pub system: SystemConfig,
    pub clusters: ClusterSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosPath {
    /// Angle of departure at the BS, in (-pi, pi].
    pub aod: f64,
    /// Angle of arrival at the UE.
    pub aoa: f64,
    pub distance_m: f64,
    pub pathloss_db: f64,
    pub gain: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPaths {
    /// Index of the scatterer group this cluster belongs to.
    pub group: usize,
    pub aod: f64,
    pub aoa: f64,
    pub pathloss_db: f64,
    pub aod_offsets: Vec<f64>,
    pub aoa_offsets: Vec<f64>,
    pub gains: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub los: LosPath,
    pub clusters: Vec<ClusterPaths>,
}

impl PathSet {
    /// Linear power of the LOS path, `1 / rho_LOS`.
    pub fn los_power(&self) -> f64 {
        units::db_to_linear(-self.los.pathloss_db)
    }

    /// Sum of the linear cluster powers, `sum_c 1 / rho_c`.
    pub fn nlos_power(&self) -> f64 {
        self.clusters.iter().map(|c| units::db_to_linear(-c.pathloss_db)).sum()
    }
}

fn uniform_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random::<f64>() * TAU;
    [r * a.cos(), r * a.sin()]
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Azimuth of `v` wrapped into (-pi, pi].
pub fn azimuth(v: [f64; 2]) -> f64 {
    let a = v[1].atan2(v[0]);
    if a <= -PI {
        a + TAU
    } else {
        a
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Unit-variance circularly-symmetric complex Gaussian.
fn cn01(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Builds an episode from `system.seed`.
pub fn init_episode(system: &SystemConfig, clusters: &ClusterSpec) -> EpisodeState {
    EpisodeState::new(system, clusters, system.seed)
}

impl EpisodeState {
    pub fn new(system: &SystemConfig, clusters: &ClusterSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let position = uniform_in_disc(&mut rng, system.cell_radius_m);
        let heading = rng.random::<f64>() * TAU;
        let speed = uniform(&mut rng, system.speed_min, system.speed_max);
        let accel = uniform(&mut rng, system.accel_min, system.accel_max);
        let shadow = Normal::new(0.0, clusters.shadow_sigma_db).expect("sigma validated");
        let groups = (0..clusters.n_groups)
            .map(|_| ScattererGroup {
                center: uniform_in_disc(&mut rng, system.cell_radius_m),
                shadow_db: shadow.sample(&mut rng),
            })
            .collect();
        Self {
            seed,
            step: 0,
            ue: UeMotion { position, speed, accel, heading },
            groups,
            system: system.clone(),
            clusters: clusters.clone(),
        }
    }

    /// Moves the UE along its heading for `dt` seconds, reflecting off the
    /// cell boundary.
    pub fn advance(&self, dt: f64) -> EpisodeState {
        assert!(dt > 0.0, "advance needs a positive time step");
        let mut next = self.clone();
        next.ue = move_ue(self.ue, dt, self.system.cell_radius_m);
        next.step += 1;
        next
    }

    /// Distance from UE to BS.
    pub fn distance(&self) -> f64 {
        norm(self.ue.position)
    }

    /// Indices of the groups whose visible region contains the UE.
    pub fn active_groups(&self) -> Vec<usize> {
        let p = self.ue.position;
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| norm([p[0] - g.center[0], p[1] - g.center[1]]) <= self.clusters.visible_radius_m)
            .map(|(i, _)| i)
            .collect()
    }

    /// Draws the path parameters seen at the current step.
    pub fn snapshot_paths(&self) -> PathSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + self.step as u64);

        let p = self.ue.position;
        let distance = norm(p).max(MIN_DISTANCE_M);
        let los_pl = units::pathloss_db(distance, self.system.carrier_hz);
        let los_phase = rng.random::<f64>() * TAU;
        let los = LosPath {
            aod: azimuth(p),
            aoa: wrap_angle(azimuth(p) + PI),
            distance_m: distance,
            pathloss_db: los_pl,
            gain: Complex64::from_polar(1.0, los_phase),
        };

        let active = self.active_groups();
        let weights: Vec<f64> = active.iter().map(|&g| units::db_to_linear(self.groups[g].shadow_db)).collect();
        let weight_sum: f64 = weights.iter().sum();
        let nlos_total = units::db_to_linear(-los_pl) * units::db_to_linear(-self.clusters.ricean_k_db);
        let half_spread = 0.5 * self.clusters.aod_spread();
        let n_paths = self.clusters.paths_per_cluster;

        let clusters = active
            .iter()
            .zip(&weights)
            .map(|(&g, &w)| {
                let center = self.groups[g].center;
                let power = nlos_total * w / weight_sum;
                let draw_offsets = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..n_paths).map(|_| uniform(rng, -half_spread, half_spread)).collect()
                };
                let aod_offsets = draw_offsets(&mut rng);
                let aoa_offsets = draw_offsets(&mut rng);
                let gains = (0..n_paths).map(|_| cn01(&mut rng)).collect();
                ClusterPaths {
                    group: g,
                    aod: azimuth(center),
                    aoa: azimuth([center[0] - p[0], center[1] - p[1]]),
                    pathloss_db: -units::linear_to_db(power),
                    aod_offsets,
                    aoa_offsets,
                    gains,
                }
            })
            .collect();
        PathSet { los, clusters }
    }
}

/// Distance covered in `dt` under constant deceleration that stops at zero
/// speed, and the resulting speed.
fn kinematics(speed: f64, accel: f64, dt: f64) -> (f64, f64) {
    let v_end = speed + accel * dt;
    if v_end >= 0.0 {
        (speed * dt + 0.5 * accel * dt * dt, v_end)
    } else {
        // Stops at t = v / |a| and stays put.
        let t_stop = speed / -accel;
        (speed * t_stop + 0.5 * accel * t_stop * t_stop, 0.0)
    }
}

fn move_ue(ue: UeMotion, dt: f64, radius: f64) -> UeMotion {
    let (mut remaining, speed) = kinematics(ue.speed, ue.accel, dt);
    let mut pos = ue.position;
    let mut dir = [ue.heading.cos(), ue.heading.sin()];
    let mut reflected = false;
    for _ in 0..MAX_REFLECTIONS {
        let end = [pos[0] + dir[0] * remaining, pos[1] + dir[1] * remaining];
        if norm(end) <= radius || remaining <= 0.0 {
            pos = end;
            remaining = 0.0;
            break;
        }
        // Forward intersection of the ray with the boundary circle.
        let b = pos[0] * dir[0] + pos[1] * dir[1];
        let c = pos[0] * pos[0] + pos[1] * pos[1] - radius * radius;
        let t = (-b + (b * b - c).max(0.0).sqrt()).clamp(0.0, remaining);
        let hit = [pos[0] + dir[0] * t, pos[1] + dir[1] * t];
        let r = norm(hit);
        let n = [hit[0] / r, hit[1] / r];
        let dn = dir[0] * n[0] + dir[1] * n[1];
        dir = [dir[0] - 2.0 * dn * n[0], dir[1] - 2.0 * dn * n[1]];
        pos = hit;
        remaining -= t;
        reflected = true;
    }
    if remaining > 0.0 {
        pos = [pos[0] + dir[0] * remaining, pos[1] + dir[1] * remaining];
    }
    let r = norm(pos);
    if r > radius {
        pos = [pos[0] * radius / r, pos[1] * radius / r];
    }
    let heading = if reflected { dir[1].atan2(dir[0]).rem_euclid(TAU) } else { ue.heading };
    UeMotion { position: pos, speed, accel: ue.accel, heading }
}
