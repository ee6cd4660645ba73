//! Ground-truth microphone/source geometry with asynchronous clock offsets.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Room size used by the reference simulation, meters.
pub const PAPER_ROOM: [f64; 3] = [10.0, 10.0, 3.0];
/// Speed of sound used by the reference simulation, m/s.
pub const PAPER_SPEED: f64 = 340.0;

/// Derives an independent stream seed from a master seed and a stream index.
///
/// `mix_seed(master, k) = splitmix64(master ^ splitmix64(k + 0x9E3779B97F4A7C15))`.
/// The inner finalizer decorrelates consecutive indices before they meet the
/// master seed, so trial `k` of one run never shares a stream with trial `k+1`
/// of a run whose master seed differs by one.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator every randomized operation in the crate uses.
pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub mics: Vec<Point>,
    pub srcs: Vec<Point>,
    /// Recording start time per microphone, seconds.
    pub delta: Vec<f64>,
    /// Emission time per source, seconds.
    pub eta: Vec<f64>,
    /// Speed of sound, m/s.
    pub c: f64,
}

impl Scene {
    /// Builds a scene with zero clock offsets.
    pub fn synchronous(mics: Vec<Point>, srcs: Vec<Point>, c: f64) -> Result<Self> {
        let scene = Self {
            delta: vec![0.0; mics.len()],
            eta: vec![0.0; srcs.len()],
            mics,
            srcs,
            c,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn num_mics(&self) -> usize {
        self.mics.len()
    }

    pub fn num_srcs(&self) -> usize {
        self.srcs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mics.is_empty() || self.srcs.is_empty() {
            return Err(Error::Config(
                "a scene needs at least one microphone and one source".into(),
            ));
        }
        if self.delta.len() != self.mics.len() || self.eta.len() != self.srcs.len() {
            return Err(Error::Shape(format!(
                "{} mics with {} start times, {} sources with {} emission times",
                self.mics.len(),
                self.delta.len(),
                self.srcs.len(),
                self.eta.len()
            )));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Config(format!(
                "speed of sound must be positive, got {}",
                self.c
            )));
        }
        let positions_finite = self
            .mics
            .iter()
            .chain(&self.srcs)
            .all(|p| p.iter().all(|v| v.is_finite()));
        let offsets_finite = self.delta.iter().chain(&self.eta).all(|v| v.is_finite());
        if !(positions_finite && offsets_finite) {
            return Err(Error::Config("non-finite position or offset".into()));
        }
        Ok(())
    }

    /// Same geometry, new clock offsets.
    pub fn with_offsets(&self, delta: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let scene = Self {
            delta,
            eta,
            ..self.clone()
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Replaces `delta` and `eta` with fresh draws from `U[-offset_range, offset_range]`.
    pub fn redraw_offsets(&self, offset_range: f64, seed: u64) -> Result<Self> {
        check_offset_range(offset_range)?;
        let mut rng = rng_from_seed(seed);
        let delta = draw_offsets(&mut rng, self.num_mics(), offset_range);
        let eta = draw_offsets(&mut rng, self.num_srcs(), offset_range);
        self.with_offsets(delta, eta)
    }

    pub fn translated(&self, by: &Point) -> Self {
        Self {
            mics: self.mics.iter().map(|p| p + by).collect(),
            srcs: self.srcs.iter().map(|p| p + by).collect(),
            ..self.clone()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub num_mics: usize,
    pub num_srcs: usize,
    /// Room side lengths, meters. The box spans `[0, room[k]]` on each axis.
    pub room: [f64; 3],
    /// Half-width of the uniform offset interval, seconds.
    pub offset_range: f64,
    /// Speed of sound, m/s.
    pub speed: f64,
    pub seed: u64,
}

impl SceneConfig {
    /// 20 microphones and 20 sources in a 10x10x3 m room, c = 340 m/s, offsets in [-1, 1] s.
    pub fn paper(seed: u64) -> Self {
        Self {
            num_mics: 20,
            num_srcs: 20,
            room: PAPER_ROOM,
            offset_range: 1.0,
            speed: PAPER_SPEED,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_mics == 0 || self.num_srcs == 0 {
            return Err(Error::Config(format!(
                "need at least one microphone and one source, got {} and {}",
                self.num_mics, self.num_srcs
            )));
        }
        if self.room.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!(
                "room sides must be positive, got {:?}",
                self.room
            )));
        }
        check_offset_range(self.offset_range)?;
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::Config(format!(
                "speed of sound must be positive, got {}",
                self.speed
            )));
        }
        Ok(())
    }

    /// Diagonal of the room box, the largest distance any two generated points can have.
    pub fn room_diagonal(&self) -> f64 {
        Point::from(self.room).norm()
    }
}

fn check_offset_range(offset_range: f64) -> Result<()> {
    if offset_range.is_finite() && offset_range >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "offset range must be finite and non-negative, got {offset_range}"
        )))
    }
}

pub(crate) fn draw_offsets<R: Rng>(rng: &mut R, n: usize, half_width: f64) -> Vec<f64> {
    (0..n)
        .map(|_| half_width * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

fn draw_point<R: Rng>(rng: &mut R, room: &[f64; 3]) -> Point {
    Point::new(
        room[0] * rng.random::<f64>(),
        room[1] * rng.random::<f64>(),
        room[2] * rng.random::<f64>(),
    )
}

/// Draws a scene from `config`.
///
/// Draw order from a ChaCha8 stream seeded with `config.seed`: microphone
/// positions (x, y, z each), source positions, start times, emission times.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let mics = (0..config.num_mics)
        .map(|_| draw_point(&mut rng, &config.room))
        .collect();
    let srcs = (0..config.num_srcs)
        .map(|_| draw_point(&mut rng, &config.room))
        .collect();
    let delta = draw_offsets(&mut rng, config.num_mics, config.offset_range);
    let eta = draw_offsets(&mut rng, config.num_srcs, config.offset_range);
    Ok(Scene {
        mics,
        srcs,
        delta,
        eta,
        c: config.speed,
    })
}

/// Translates every position so that the first source sits at the origin.
pub fn normalize_scene(scene: &Scene) -> Scene {
    match scene.srcs.first() {
        Some(origin) => {
            let mut out = scene.translated(&-origin);
            // exact zero even when the subtraction would leave a -0.0
            out.srcs[0] = Point::zeros();
            out
        }
        None => scene.clone(),
    }
}

/// Largest pairwise distance over all microphones and sources, meters.
pub fn scene_diameter(scene: &Scene) -> f64 {
    point_cloud_diameter(scene.mics.iter().chain(&scene.srcs))
}

pub(crate) fn point_cloud_diameter<'a>(points: impl Iterator<Item = &'a Point> + Clone) -> f64 {
    let mut best = 0.0_f64;
    for (k, a) in points.clone().enumerate() {
        for b in points.clone().skip(k + 1) {
            best = best.max((a - b).norm());
        }
    }
    best
}
