use std::f64::consts::PI;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{crop_range, farthest_point_sample, PointCloud};
use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Mounting height of the simulated LiDAR above the ground plane.
pub const SENSOR_HEIGHT: f64 = 1.8;

/// Synthetic scene knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    /// Points per agent after farthest point sampling.
    pub n_points: usize,
    /// Upper bound on box obstacles; the count is drawn from `2..=n_boxes`.
    pub n_boxes: usize,
    /// Maximum LiDAR return range.
    pub range_m: f64,
    pub comm_range_m: f64,
    pub min_separation_m: f64,
    pub max_separation_m: f64,
    pub xy_limit_m: f64,
    pub beams: usize,
    pub azimuth_steps: usize,
    /// Standard deviation of the range noise along each ray.
    pub range_noise_m: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            n_points: 2048,
            n_boxes: 8,
            range_m: 40.0,
            comm_range_m: 50.0,
            min_separation_m: 5.0,
            max_separation_m: 20.0,
            xy_limit_m: 70.0,
            beams: 32,
            azimuth_steps: 720,
            range_noise_m: 0.01,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.beams < 2 || self.azimuth_steps == 0 {
            return Err(Error::invalid("scene counts must be positive"));
        }
        if self.n_boxes < 2 {
            return Err(Error::invalid("n_boxes must be at least 2"));
        }
        for (name, v) in [
            ("range_m", self.range_m),
            ("comm_range_m", self.comm_range_m),
            ("min_separation_m", self.min_separation_m),
            ("xy_limit_m", self.xy_limit_m),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.max_separation_m < self.min_separation_m {
            return Err(Error::invalid("max_separation_m below min_separation_m"));
        }
        if self.max_separation_m > self.comm_range_m {
            return Err(Error::invalid(format!(
                "separation {} m exceeds communication range {} m",
                self.max_separation_m, self.comm_range_m
            )));
        }
        Ok(())
    }

    /// Read the flat key=value scene file; returns the params and the seed.
    pub fn from_kv(cfg: &KvConfig) -> Result<(Self, u64)> {
        let d = SceneParams::default();
        let p = SceneParams {
            n_points: cfg.get_or("n_points", d.n_points)?,
            n_boxes: cfg.get_or("n_boxes", d.n_boxes)?,
            range_m: cfg.get_or("range_m", d.range_m)?,
            comm_range_m: cfg.get_or("comm_range_m", d.comm_range_m)?,
            min_separation_m: cfg.get_or("min_separation_m", d.min_separation_m)?,
            max_separation_m: cfg.get_or("max_separation_m", d.max_separation_m)?,
            xy_limit_m: cfg.get_or("xy_limit_m", d.xy_limit_m)?,
            beams: cfg.get_or("beams", d.beams)?,
            azimuth_steps: cfg.get_or("azimuth_steps", d.azimuth_steps)?,
            range_noise_m: cfg.get_or("range_noise_m", d.range_noise_m)?,
        };
        p.validate()?;
        Ok((p, cfg.get_or("seed", 0u64)?))
    }

    pub fn to_kv(&self, cfg: &mut KvConfig) {
        cfg.set("n_points", self.n_points);
        cfg.set("n_boxes", self.n_boxes);
        cfg.set("range_m", self.range_m);
        cfg.set("comm_range_m", self.comm_range_m);
        cfg.set("min_separation_m", self.min_separation_m);
        cfg.set("max_separation_m", self.max_separation_m);
        cfg.set("xy_limit_m", self.xy_limit_m);
        cfg.set("beams", self.beams);
        cfg.set("azimuth_steps", self.azimuth_steps);
        cfg.set("range_noise_m", self.range_noise_m);
    }
}

/// Two agents observing one scene. Each cloud is in its own sensor frame and
/// carries its sensor-to-world pose.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub tx: PointCloud,
    pub rx: PointCloud,
    /// Maps transmitter sensor coordinates into the receiver sensor frame.
    pub tx_to_rx: Isometry3<f64>,
    pub separation: f64,
}

impl ScenePair {
    /// Receiver cloud expressed in the transmitter sensor frame.
    pub fn rx_in_tx_frame(&self) -> PointCloud {
        self.rx.transformed(&self.tx_to_rx.inverse())
    }
}

#[derive(Clone, Copy, Debug)]
struct Obb {
    center: [f64; 3],
    half: [f64; 3],
    yaw: f64,
}

impl Obb {
    fn to_local(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]]
    }

    /// Entry distance of a ray, if it hits from outside.
    fn hit(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let o = self.to_local([
            origin[0] - self.center[0],
            origin[1] - self.center[1],
            origin[2] - self.center[2],
        ]);
        let d = self.to_local(dir);
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a].abs() > self.half[a] {
                    return None;
                }
            } else {
                let ta = (-self.half[a] - o[a]) / d[a];
                let tb = (self.half[a] - o[a]) / d[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }

    /// Horizontal distance from a point to the footprint rectangle.
    fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let l = self.to_local([x - self.center[0], y - self.center[1], 0.0]);
        let dx = (l[0].abs() - self.half[0]).max(0.0);
        let dy = (l[1].abs() - self.half[1]).max(0.0);
        dx.hypot(dy)
    }
}

fn yaw_pose(x: f64, y: f64, yaw: f64) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(x, y, SENSOR_HEIGHT),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
    )
}

/// Generate a deterministic two-agent LiDAR scene: ground plane, box
/// obstacles and wall segments, scanned by ray casting from each agent so that
/// near surfaces are sampled more densely and occluded surfaces are absent.
pub fn synth_scene(seed: u64, params: &SceneParams) -> Result<ScenePair> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let tx_yaw = rng.gen_range(-PI..PI);
    let separation = rng.gen_range(params.min_separation_m..=params.max_separation_m);
    let bearing = rng.gen_range(-PI..PI);
    let (rx_x, rx_y) = (separation * bearing.cos(), separation * bearing.sin());
    let rx_yaw = tx_yaw + rng.gen_range(-PI / 4.0..PI / 4.0);
    let sensors = [(0.0, 0.0), (rx_x, rx_y)];
    let mid = (rx_x / 2.0, rx_y / 2.0);

    let clear_of_sensors =
        |b: &Obb, margin: f64| sensors.iter().all(|&(x, y)| b.footprint_distance(x, y) > margin);

    let mut obstacles = Vec::new();
    let n_boxes = rng.gen_range(2..=params.n_boxes);
    let spread = 0.8 * params.range_m;
    while obstacles.len() < n_boxes {
        let r = spread * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(-PI..PI);
        let half = if rng.gen_bool(0.6) {
            [
                rng.gen_range(1.75..2.5),
                rng.gen_range(0.8..1.0),
                rng.gen_range(0.7..0.9),
            ]
        } else {
            [
                rng.gen_range(2.5..7.5),
                rng.gen_range(2.5..7.5),
                rng.gen_range(1.5..2.25),
            ]
        };
        let b = Obb {
            center: [mid.0 + r * phi.cos(), mid.1 + r * phi.sin(), half[2]],
            half,
            yaw: rng.gen_range(-PI..PI),
        };
        if clear_of_sensors(&b, 2.5) {
            obstacles.push(b);
        }
    }
    let n_walls = rng.gen_range(1..=2);
    let mut walls = 0;
    while walls < n_walls {
        let r = rng.gen_range(10.0..25.0);
        let phi = rng.gen_range(-PI..PI);
        let height = rng.gen_range(2.0..3.5);
        let b = Obb {
            center: [mid.0 + r * phi.cos(), mid.1 + r * phi.sin(), height / 2.0],
            half: [rng.gen_range(7.5..20.0), 0.15, height / 2.0],
            yaw: phi + PI / 2.0 + rng.gen_range(-0.3..0.3),
        };
        if clear_of_sensors(&b, 2.0) {
            obstacles.push(b);
            walls += 1;
        }
    }

    let noise = Normal::new(0.0, params.range_noise_m.max(0.0))
        .map_err(|e| Error::invalid(format!("range noise: {e}")))?;
    let tx_pose = yaw_pose(0.0, 0.0, tx_yaw);
    let rx_pose = yaw_pose(rx_x, rx_y, rx_yaw);
    let tx = scan(&tx_pose, tx_yaw, &obstacles, params, &mut rng, &noise)?
        .with_frame_id(format!("scene{seed:06}_tx"))
        .with_pose(tx_pose);
    let rx = scan(&rx_pose, rx_yaw, &obstacles, params, &mut rng, &noise)?
        .with_frame_id(format!("scene{seed:06}_rx"))
        .with_pose(rx_pose);
    Ok(ScenePair {
        tx,
        rx,
        tx_to_rx: rx_pose.inverse() * tx_pose,
        separation,
    })
}

fn scan(
    pose: &Isometry3<f64>,
    yaw: f64,
    obstacles: &[Obb],
    params: &SceneParams,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
) -> Result<PointCloud> {
    let origin = [pose.translation.x, pose.translation.y, pose.translation.z];
    let world_to_sensor = pose.inverse();
    let az_offset = rng.gen_range(0.0..2.0 * PI / params.azimuth_steps as f64);
    let (lo, hi) = (-30f64.to_radians(), 10f64.to_radians());
    let mut raw = Vec::new();
    for e in 0..params.beams {
        let elev = lo + (hi - lo) * e as f64 / (params.beams - 1) as f64;
        let (se, ce) = elev.sin_cos();
        for a in 0..params.azimuth_steps {
            let az = yaw + az_offset + 2.0 * PI * a as f64 / params.azimuth_steps as f64;
            let dir = [ce * az.cos(), ce * az.sin(), se];
            let mut t = if dir[2] < 0.0 {
                origin[2] / -dir[2]
            } else {
                f64::INFINITY
            };
            for b in obstacles {
                if let Some(tb) = b.hit(origin, dir) {
                    t = t.min(tb);
                }
            }
            if t > params.range_m {
                continue;
            }
            let t = t + noise.sample(rng);
            let world = nalgebra::Point3::new(
                origin[0] + dir[0] * t,
                origin[1] + dir[1] * t,
                origin[2] + dir[2] * t,
            );
            let local = world_to_sensor * world;
            raw.push([
                local.x as f32 as f64,
                local.y as f32 as f64,
                local.z as f32 as f64,
            ]);
        }
    }
    if raw.len() < params.n_points {
        return Err(Error::invalid(format!(
            "scan produced {} returns, fewer than n_points = {}",
            raw.len(),
            params.n_points
        )));
    }
    let cloud = crop_range(&PointCloud::new(raw)?, params.xy_limit_m)?;
    if cloud.len() < params.n_points {
        return Err(Error::invalid("crop left fewer points than n_points"));
    }
    Ok(farthest_point_sample(&cloud, params.n_points, 0)?.with_pose(*pose))
}

/// `count` scenes with seeds `base_seed, base_seed + 1, ...`.
pub fn synth_dataset(base_seed: u64, count: usize, params: &SceneParams) -> Result<Vec<ScenePair>> {
    (0..count as u64)
        .map(|i| synth_scene(base_seed.wrapping_add(i), params))
        .collect()
}
