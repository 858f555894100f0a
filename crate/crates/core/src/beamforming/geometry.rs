use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

const DEFAULT_GEOMETRY: &str = include_str!("../../assets/geometry_default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microphone {
    #[serde(default)]
    pub name: String,
    pub position: [f64; 3],
}

/// Microphone positions in meters relative to the head center
/// (x forward, y left, z up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mics: Vec<Microphone>,
    pub reference_channel: usize,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
}

fn default_c() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl ArrayGeometry {
    pub fn new(positions: Vec<[f64; 3]>, reference_channel: usize) -> Result<Self> {
        let geometry = Self {
            mics: positions
                .into_iter()
                .enumerate()
                .map(|(i, position)| Microphone {
                    name: format!("mic{i}"),
                    position,
                })
                .collect(),
            reference_channel,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// The shipped five-microphone glasses layout.
    pub fn glasses_default() -> Self {
        Self::from_toml_str(DEFAULT_GEOMETRY).expect("bundled geometry is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let geometry: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("geometry serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.mics.is_empty() {
            return Err(Error::InvalidConfig("array has no microphones".into()));
        }
        if self.reference_channel >= self.mics.len() {
            return Err(Error::InvalidConfig(format!(
                "reference channel {} out of range for {} microphones",
                self.reference_channel,
                self.mics.len()
            )));
        }
        if self.mics.iter().any(|m| m.position.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidConfig("microphone position is not finite".into()));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::InvalidConfig("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.mics.len()
    }

    pub fn position(&self, m: usize) -> [f64; 3] {
        self.mics[m].position
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.position(i), self.position(j));
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Same array rotated about the vertical axis by `degrees`.
    pub fn rotated(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let mut out = self.clone();
        for m in &mut out.mics {
            let [x, y, z] = m.position;
            m.position = [c * x - s * y, s * x + c * y, z];
        }
        out
    }
}

/// Unit vector pointing from the array toward azimuth/elevation (degrees).
pub fn direction(azimuth_deg: f64, elevation_deg: f64) -> [f64; 3] {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

/// `K` equal azimuth blocks; block `k` is centered on `-180 + k * 360 / K`
/// degrees, so the frontal direction sits in the middle of the block axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGrid {
    pub num_blocks: usize,
}

impl Default for BlockGrid {
    fn default() -> Self {
        Self { num_blocks: 20 }
    }
}

impl BlockGrid {
    pub fn new(num_blocks: usize) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::InvalidConfig("block grid needs at least one block".into()));
        }
        Ok(Self { num_blocks })
    }

    pub fn block_width(&self) -> f64 {
        360.0 / self.num_blocks as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        -180.0 + k as f64 * self.block_width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.num_blocks).map(|k| self.center(k)).collect()
    }

    /// Half-open span `[lo, hi)` of block `k` in degrees (`lo` may be < -180).
    pub fn span(&self, k: usize) -> (f64, f64) {
        let half = self.block_width() / 2.0;
        (self.center(k) - half, self.center(k) + half)
    }

    /// Block containing an azimuth (any real angle).
    pub fn block_of(&self, azimuth_deg: f64) -> usize {
        let w = self.block_width();
        let rel = (azimuth_deg + 180.0 + w / 2.0).rem_euclid(360.0);
        ((rel / w).floor() as usize).min(self.num_blocks - 1)
    }
}
