//! Multi-modal RF fingerprint simulator for a robot moving on a floor plan.
//!
//! Each time step yields RSSI from Wi-Fi anchors (log-distance path loss minus
//! the attenuation of every obstacle crossed by the line of sight), CSI-like
//! sinusoids of distance whose phase depends on crossed obstacles, UWB range
//! and power readings, and IMU-like motion features. The target domain reuses
//! the source floor with the obstacles of one region translated, so only
//! signals whose paths cross the moved furniture change.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{DomainDataset, LabelSection, Standardizer};
use super::derive_seed;
use crate::error::{Error, Result};
use crate::models::InputKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Wifi,
    Uwb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub kind: AnchorKind,
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` attenuating every path through it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub attenuation_db: f64,
}

impl Obstacle {
    fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    fn inside(&self, extents: [f64; 2]) -> bool {
        self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x1 <= extents[0]
            && self.y1 <= extents[1]
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }

    /// Liang-Barsky clip of the segment `a -> b` against the rectangle.
    pub fn crosses(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for (p, q) in [
            (-dx, a.0 - self.x0),
            (dx, self.x1 - a.0),
            (-dy, a.1 - self.y0),
            (dy, self.y1 - a.1),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLoss {
    /// Received power at the reference distance, dBm.
    pub p0_dbm: f64,
    pub exponent: f64,
    /// Reference distance in meters; closer ranges are clamped to it.
    pub d0: f64,
    pub uwb_p0_dbm: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        Self {
            p0_dbm: -30.0,
            exponent: 2.2,
            d0: 0.1,
            uwb_p0_dbm: -40.0,
        }
    }
}

impl PathLoss {
    /// `p0 - 10 * eta * log10(max(d, d0) / d0)`, without obstacles or noise.
    pub fn rssi(&self, distance: f64) -> f64 {
        self.p0_dbm - 10.0 * self.exponent * (distance.max(self.d0) / self.d0).log10()
    }
}

/// Standard deviations of the additive gaussian noise per modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseLevels {
    pub rssi_db: f64,
    pub csi: f64,
    pub uwb_range_m: f64,
    pub uwb_power_db: f64,
    pub imu: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            rssi_db: 2.0,
            csi: 0.05,
            uwb_range_m: 0.15,
            uwb_power_db: 1.0,
            imu: 0.05,
        }
    }
}

impl NoiseLevels {
    pub fn silent() -> Self {
        Self {
            rssi_db: 0.0,
            csi: 0.0,
            uwb_range_m: 0.0,
            uwb_power_db: 0.0,
            imu: 0.0,
        }
    }
}

/// Channel counts per modality; concatenated in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalLayout {
    pub rssi: usize,
    pub csi: usize,
    pub uwb: usize,
    pub imu: usize,
}

impl SignalLayout {
    pub const IMU: usize = 9;

    pub fn total(&self) -> usize {
        self.rssi + self.csi + self.uwb + self.imu
    }
}

/// Generator settings for one source/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfSpec {
    /// Floor length and width in meters.
    pub extents: [f64; 2],
    pub wifi_anchors: usize,
    pub uwb_anchors: usize,
    pub rssi_channels: usize,
    pub csi_channels: usize,
    /// Obstacles placed anywhere on the floor.
    pub random_obstacles: usize,
    /// Obstacles placed inside `shift_region`; these are the ones that move.
    pub region_obstacles: usize,
    /// Additional obstacles given explicitly.
    pub obstacles: Vec<Obstacle>,
    pub attenuation_db: [f64; 2],
    pub obstacle_size: [f64; 2],
    /// `[x0, y0, x1, y1]` of the area whose furniture moves between domains.
    pub shift_region: [f64; 4],
    /// Translation applied to obstacles centered in `shift_region`.
    pub shift_offset: [f64; 2],
    /// Extra phase (radians per dB) added to CSI channels by each crossed obstacle.
    pub csi_phase_per_db: f64,
    /// Extra UWB range (meters per dB) from non-line-of-sight propagation.
    pub uwb_bias_per_db: f64,
    pub path_loss: PathLoss,
    pub noise: NoiseLevels,
    pub dt: f64,
    pub max_speed: f64,
    pub window_length: usize,
    pub source_windows: usize,
    pub source_test_windows: usize,
    pub target_windows: usize,
}

impl Default for RfSpec {
    fn default() -> Self {
        Self {
            extents: [12.0, 8.0],
            wifi_anchors: 11,
            uwb_anchors: 3,
            rssi_channels: 8,
            csi_channels: 40,
            random_obstacles: 6,
            region_obstacles: 6,
            obstacles: Vec::new(),
            attenuation_db: [3.0, 8.0],
            obstacle_size: [0.6, 1.6],
            shift_region: [6.0, 2.0, 11.0, 7.0],
            shift_offset: [-2.5, -1.5],
            csi_phase_per_db: 0.15,
            uwb_bias_per_db: 0.04,
            path_loss: PathLoss::default(),
            noise: NoiseLevels::default(),
            dt: 0.1,
            max_speed: 1.0,
            window_length: 10,
            source_windows: 20_000,
            source_test_windows: 5_000,
            target_windows: 20_000,
        }
    }
}

impl RfSpec {
    /// Same generator with no furniture movement.
    pub fn null_shift() -> Self {
        Self {
            shift_offset: [0.0, 0.0],
            ..Self::default()
        }
    }

    pub fn layout(&self) -> SignalLayout {
        SignalLayout {
            rssi: self.rssi_channels,
            csi: self.csi_channels,
            uwb: 2 * self.uwb_anchors,
            imu: SignalLayout::IMU,
        }
    }

    pub fn input_kind(&self) -> InputKind {
        InputKind::Sequence {
            window_length: self.window_length,
            signal_dim: self.layout().total(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [l, w] = self.extents;
        if !(l > 0.0 && w > 0.0) {
            return Err(Error::config("data.extents", "must be positive"));
        }
        if self.wifi_anchors == 0 && (self.rssi_channels > 0 || self.csi_channels > 0) {
            return Err(Error::config("data.wifi_anchors", "RSSI/CSI channels need Wi-Fi anchors"));
        }
        if self.window_length == 0 {
            return Err(Error::config("data.window_length", "must be at least 1"));
        }
        if !(self.dt > 0.0 && self.max_speed > 0.0) {
            return Err(Error::config("data.dt", "time step and max speed must be positive"));
        }
        let [a0, a1] = self.attenuation_db;
        if !(a0 >= 0.0 && a1 >= a0) {
            return Err(Error::config("data.attenuation_db", "need 0 <= min <= max"));
        }
        let [s0, s1] = self.obstacle_size;
        if !(s0 > 0.0 && s1 >= s0 && s1 <= l.min(w)) {
            return Err(Error::config("data.obstacle_size", "need 0 < min <= max <= floor size"));
        }
        let [x0, y0, x1, y1] = self.shift_region;
        if !(x0 >= 0.0 && y0 >= 0.0 && x1 <= l && y1 <= w && x1 - x0 >= s1 && y1 - y0 >= s1) {
            return Err(Error::config(
                "data.shift_region",
                "must lie inside the floor and fit the largest obstacle",
            ));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.inside(self.extents) {
                return Err(Error::config(
                    format!("data.obstacles[{i}]"),
                    "obstacle lies outside the floor extents",
                ));
            }
            if o.attenuation_db < 0.0 {
                return Err(Error::config(format!("data.obstacles[{i}]"), "negative attenuation"));
            }
        }
        for (name, n) in [
            ("data.source_windows", self.source_windows),
            ("data.source_test_windows", self.source_test_windows),
            ("data.target_windows", self.target_windows),
        ] {
            if n == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorEnvironment {
    pub extents: [f64; 2],
    pub anchors: Vec<Anchor>,
    pub obstacles: Vec<Obstacle>,
    pub path_loss: PathLoss,
    pub noise: NoiseLevels,
    pub csi_phase_per_db: f64,
    pub uwb_bias_per_db: f64,
    pub layout: SignalLayout,
    pub seed: u64,
}

fn random_obstacle(rng: &mut ChaCha8Rng, area: [f64; 4], size: [f64; 2], att: [f64; 2]) -> Obstacle {
    let w = rng.random_range(size[0]..=size[1]);
    let h = rng.random_range(size[0]..=size[1]);
    let x0 = rng.random_range(area[0]..=area[2] - w);
    let y0 = rng.random_range(area[1]..=area[3] - h);
    Obstacle {
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
        attenuation_db: rng.random_range(att[0]..=att[1]),
    }
}

/// Source environment: random anchor and obstacle layout fixed by `seed`.
pub fn generate_environment(spec: &RfSpec, seed: u64) -> Result<FloorEnvironment> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [l, w] = spec.extents;
    let mut anchors = Vec::new();
    for _ in 0..spec.wifi_anchors {
        anchors.push(Anchor {
            x: rng.random_range(0.0..=l),
            y: rng.random_range(0.0..=w),
            kind: AnchorKind::Wifi,
        });
    }
    for _ in 0..spec.uwb_anchors {
        anchors.push(Anchor {
            x: rng.random_range(0.0..=l),
            y: rng.random_range(0.0..=w),
            kind: AnchorKind::Uwb,
        });
    }
    let mut obstacles = spec.obstacles.clone();
    for _ in 0..spec.random_obstacles {
        obstacles.push(random_obstacle(
            &mut rng,
            [0.0, 0.0, l, w],
            spec.obstacle_size,
            spec.attenuation_db,
        ));
    }
    for _ in 0..spec.region_obstacles {
        obstacles.push(random_obstacle(
            &mut rng,
            spec.shift_region,
            spec.obstacle_size,
            spec.attenuation_db,
        ));
    }
    Ok(FloorEnvironment {
        extents: spec.extents,
        anchors,
        obstacles,
        path_loss: spec.path_loss,
        noise: spec.noise,
        csi_phase_per_db: spec.csi_phase_per_db,
        uwb_bias_per_db: spec.uwb_bias_per_db,
        layout: spec.layout(),
        seed,
    })
}

impl FloorEnvironment {
    /// The environment after moving the furniture centered in `region` by `offset`,
    /// keeping every moved obstacle inside the floor.
    pub fn shifted(&self, region: [f64; 4], offset: [f64; 2]) -> Self {
        let mut out = self.clone();
        let [l, w] = self.extents;
        for o in &mut out.obstacles {
            let (cx, cy) = o.center();
            if cx < region[0] || cx > region[2] || cy < region[1] || cy > region[3] {
                continue;
            }
            let dx = offset[0].clamp(-o.x0, l - o.x1);
            let dy = offset[1].clamp(-o.y0, w - o.y1);
            o.x0 += dx;
            o.x1 += dx;
            o.y0 += dy;
            o.y1 += dy;
        }
        out
    }

    pub fn wifi(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter().filter(|a| a.kind == AnchorKind::Wifi)
    }

    pub fn uwb(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter().filter(|a| a.kind == AnchorKind::Uwb)
    }

    /// Distance to the anchor and total attenuation along the line of sight.
    pub fn link(&self, anchor: &Anchor, p: (f64, f64)) -> (f64, f64) {
        let d = ((anchor.x - p.0).powi(2) + (anchor.y - p.1).powi(2)).sqrt();
        let att = self
            .obstacles
            .iter()
            .filter(|o| o.crosses((anchor.x, anchor.y), p))
            .map(|o| o.attenuation_db)
            .sum();
        (d, att)
    }

    /// Noise-free RSSI at `p` from `anchor`.
    pub fn rssi(&self, anchor: &Anchor, p: (f64, f64)) -> f64 {
        let (d, att) = self.link(anchor, p);
        self.path_loss.rssi(d) - att
    }
}

/// Positions of the robot at a fixed time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<(f64, f64)>,
    pub dt: f64,
    pub seed: u64,
}

/// Smoothed random-waypoint walk. Steps never exceed `max_speed * dt`.
pub fn simulate_trajectory(
    env: &FloorEnvironment,
    n_steps: usize,
    window_length: usize,
    dt: f64,
    max_speed: f64,
    seed: u64,
) -> Result<Trajectory> {
    if n_steps < window_length {
        return Err(Error::config(
            "n_steps",
            format!("{n_steps} steps cannot fill a window of {window_length}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [l, w] = env.extents;
    let margin = 0.2f64.min(l / 4.0).min(w / 4.0);
    let mut waypoint = || {
        (
            rng.random_range(margin..=l - margin),
            rng.random_range(margin..=w - margin),
            rng.random_range(0.4..=1.0) * max_speed,
        )
    };
    let (x, y, _) = waypoint();
    let mut pos = (x, y);
    let mut goal = waypoint();
    let mut vel = (0.0, 0.0);
    let mut points = Vec::with_capacity(n_steps);
    points.push(pos);
    while points.len() < n_steps {
        let (gx, gy) = (goal.0 - pos.0, goal.1 - pos.1);
        let dist = (gx * gx + gy * gy).sqrt();
        if dist < 0.3 {
            goal = waypoint();
            continue;
        }
        let speed = goal.2;
        let desired = (gx / dist * speed, gy / dist * speed);
        vel = (0.85 * vel.0 + 0.15 * desired.0, 0.85 * vel.1 + 0.15 * desired.1);
        let norm = (vel.0 * vel.0 + vel.1 * vel.1).sqrt();
        if norm > max_speed {
            vel = (vel.0 / norm * max_speed, vel.1 / norm * max_speed);
        }
        pos = (
            (pos.0 + vel.0 * dt).clamp(0.0, l),
            (pos.1 + vel.1 * dt).clamp(0.0, w),
        );
        points.push(pos);
    }
    Ok(Trajectory { points, dt, seed })
}

/// One fingerprint window; row-major `window_length x signal_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub values: Array2<f64>,
    /// Position at the window's last step.
    pub label: (f64, f64),
}

/// Per-step signals along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    /// `steps x signal_dim`.
    pub signals: Array2<f64>,
    pub positions: Vec<(f64, f64)>,
}

impl SignalTrace {
    /// Sliding windows with stride 1, labeled by their last step.
    pub fn windows(&self, window_length: usize) -> Vec<SignalWindow> {
        (window_length - 1..self.positions.len())
            .map(|end| SignalWindow {
                values: self
                    .signals
                    .slice(s![end + 1 - window_length..=end, ..])
                    .to_owned(),
                label: self.positions[end],
            })
            .collect()
    }

    pub fn to_dataset(
        &self,
        name: &str,
        window_length: usize,
        extents: [f64; 2],
        section: LabelSection,
    ) -> Result<DomainDataset> {
        let dim = self.signals.ncols();
        let n = self.positions.len() + 1 - window_length;
        let mut inputs = Array2::<f32>::zeros((n, window_length * dim));
        let mut labels = Array2::<f32>::zeros((n, 2));
        for (i, end) in (window_length - 1..self.positions.len()).enumerate() {
            let block = self.signals.slice(s![end + 1 - window_length..=end, ..]);
            for (dst, src) in inputs.row_mut(i).iter_mut().zip(block.iter()) {
                *dst = *src as f32;
            }
            labels[[i, 0]] = self.positions[end].0 as f32;
            labels[[i, 1]] = self.positions[end].1 as f32;
        }
        DomainDataset::new(
            name,
            InputKind::Sequence {
                window_length,
                signal_dim: dim,
            },
            extents.to_vec(),
            inputs,
            Some(labels),
            section,
        )
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

const CSI_WAVELENGTHS: [f64; 4] = [2.0, 2.6, 3.4, 4.4];

/// Signals for every trajectory step. Noise is seeded from the environment and trajectory seeds.
pub fn synthesize_signals(env: &FloorEnvironment, trajectory: &Trajectory) -> SignalTrace {
    let layout = env.layout;
    let wifi: Vec<Anchor> = env.wifi().copied().collect();
    let uwb: Vec<Anchor> = env.uwb().copied().collect();
    let noise_seed = derive_seed(env.seed ^ trajectory.seed.rotate_left(17), "signal-noise");
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut gauss = |sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("positive sigma").sample(&mut rng)
        } else {
            0.0
        }
    };
    let n = trajectory.points.len();
    let dt = trajectory.dt;
    let mut signals = Array2::<f64>::zeros((n, layout.total()));
    let mut prev_vel = (0.0, 0.0);
    let mut prev_heading = 0.0;

    for (t, &p) in trajectory.points.iter().enumerate() {
        let mut row = signals.row_mut(t);
        let mut col = 0;
        let links: Vec<(f64, f64)> = wifi.iter().map(|a| env.link(a, p)).collect();
        for c in 0..layout.rssi {
            let (d, att) = links[c % links.len()];
            row[col] = env.path_loss.rssi(d) - att + gauss(env.noise.rssi_db);
            col += 1;
        }
        for c in 0..layout.csi {
            let (d, att) = links[c % links.len()];
            let lambda = CSI_WAVELENGTHS[(c / links.len()) % CSI_WAVELENGTHS.len()];
            let amp = 10f64.powf(-att / 20.0) / (1.0 + 0.1 * d);
            let phase = 2.0 * PI * d / lambda + env.csi_phase_per_db * att;
            row[col] = amp * phase.cos() + gauss(env.noise.csi);
            col += 1;
        }
        for a in &uwb {
            let (d, att) = env.link(a, p);
            row[col] = d + env.uwb_bias_per_db * att + gauss(env.noise.uwb_range_m);
            let p0 = env.path_loss.uwb_p0_dbm - env.path_loss.p0_dbm;
            row[col + 1] = env.path_loss.rssi(d) + p0 - att + gauss(env.noise.uwb_power_db);
            col += 2;
        }
        let vel = if t == 0 {
            (0.0, 0.0)
        } else {
            let q = trajectory.points[t - 1];
            ((p.0 - q.0) / dt, (p.1 - q.1) / dt)
        };
        let acc = ((vel.0 - prev_vel.0) / dt, (vel.1 - prev_vel.1) / dt);
        let speed = (vel.0 * vel.0 + vel.1 * vel.1).sqrt();
        let heading = if speed > 1e-9 { vel.1.atan2(vel.0) } else { prev_heading };
        let yaw_rate = if t == 0 { 0.0 } else { wrap_angle(heading - prev_heading) / dt };
        let imu = [
            vel.0,
            vel.1,
            speed,
            heading.sin(),
            heading.cos(),
            acc.0,
            acc.1,
            yaw_rate,
            (acc.0 * acc.0 + acc.1 * acc.1).sqrt(),
        ];
        for v in imu {
            row[col] = v + gauss(env.noise.imu);
            col += 1;
        }
        prev_vel = vel;
        prev_heading = heading;
    }
    SignalTrace {
        signals,
        positions: trajectory.points.clone(),
    }
}

/// Source train/test splits and the shifted target domain, standardized with source statistics.
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub source_train: DomainDataset,
    pub source_test: DomainDataset,
    /// Target windows; labels are evaluation-only.
    pub target: DomainDataset,
    pub standardizer: Standardizer,
    pub source_env: FloorEnvironment,
    pub target_env: FloorEnvironment,
}

pub fn make_domain_pair(spec: &RfSpec, seed: u64) -> Result<DomainPair> {
    spec.validate()?;
    let source_env = generate_environment(spec, derive_seed(seed, "environment"))?;
    let target_env = source_env.shifted(spec.shift_region, spec.shift_offset);
    let wl = spec.window_length;
    let walk = |env: &FloorEnvironment, windows: usize, stream: &str| {
        simulate_trajectory(
            env,
            windows + wl - 1,
            wl,
            spec.dt,
            spec.max_speed,
            derive_seed(seed, stream),
        )
    };
    let mut train = synthesize_signals(&source_env, &walk(&source_env, spec.source_windows, "source-train")?);
    let mut test = synthesize_signals(&source_env, &walk(&source_env, spec.source_test_windows, "source-test")?);
    let mut target = synthesize_signals(&target_env, &walk(&target_env, spec.target_windows, "target")?);
    let standardizer = Standardizer::fit(&train.signals);
    for trace in [&mut train, &mut test, &mut target] {
        standardizer.apply(&mut trace.signals);
    }
    Ok(DomainPair {
        source_train: train.to_dataset("source_train", wl, spec.extents, LabelSection::Supervised)?,
        source_test: test.to_dataset("source_test", wl, spec.extents, LabelSection::Supervised)?,
        target: target.to_dataset("target", wl, spec.extents, LabelSection::EvalOnly)?,
        standardizer,
        source_env,
        target_env,
    })
}
