//! Shoebox image-source room impulse responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wall order for per-surface absorption: x=0, x=Lx, y=0, y=Ly, z=0, z=Lz.
pub const WALLS: [&str; 6] = ["x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    /// Energy absorption per wall in `WALLS` order, each in (0, 1].
    pub absorption: [f64; 6],
    pub max_image_order: usize,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Scene(format!("invalid room dimensions {:?}", self.dimensions)));
        }
        if self.absorption.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Scene(format!("absorption must lie in (0, 1]: {:?}", self.absorption)));
        }
        Ok(())
    }

    /// Pressure reflection coefficient sqrt(1 - alpha) of each wall.
    pub fn reflection(&self) -> [f64; 6] {
        self.absorption.map(|a| (1.0 - a).max(0.0).sqrt())
    }

    pub fn contains(&self, p: [f64; 3], clearance: f64) -> bool {
        (0..3).all(|i| p[i] > clearance && p[i] < self.dimensions[i] - clearance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RirConfig {
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    /// Responses are truncated to this duration.
    pub max_duration_s: f64,
    /// Half-width (in samples) of the Hann-windowed sinc interpolator.
    pub kernel_half_width: usize,
}

impl Default for RirConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            speed_of_sound: 343.0,
            max_duration_s: 0.5,
            kernel_half_width: 20,
        }
    }
}

/// One image along an axis: coordinate, reflection count and amplitude factor.
fn axis_images(src: f64, len: f64, beta_lo: f64, beta_hi: f64, order: usize) -> Vec<(f64, usize, f64)> {
    let n_max = order as i64 / 2 + 1;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..=1i64 {
            let lo = (n - q).unsigned_abs() as usize;
            let hi = n.unsigned_abs() as usize;
            if lo + hi > order {
                continue;
            }
            let x = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * len;
            out.push((x, lo + hi, beta_lo.powi(lo as i32) * beta_hi.powi(hi as i32)));
        }
    }
    out
}

/// Adds a band-limited impulse of amplitude `amp` at fractional delay `tau`.
pub(crate) fn add_fractional_tap(h: &mut [f64], tau: f64, amp: f64, half_width: usize) {
    let w = half_width as f64;
    let first = (tau - w).ceil().max(0.0) as usize;
    let last = ((tau + w).floor() as usize).min(h.len().saturating_sub(1));
    for (n, v) in h.iter_mut().enumerate().take(last + 1).skip(first) {
        let x = n as f64 - tau;
        if x.abs() >= w {
            continue;
        }
        let sinc = if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        let window = 0.5 * (1.0 + (std::f64::consts::PI * x / w).cos());
        *v += amp * sinc * window;
    }
}

/// Image-source response from `src` to `mic`. Each image contributes
/// `prod(beta) / distance` at delay `distance / c`.
pub fn simulate_rir(room: &RoomSpec, src: [f64; 3], mic: [f64; 3], cfg: &RirConfig) -> Result<Vec<f64>> {
    room.validate()?;
    if !room.contains(src, 0.0) || !room.contains(mic, 0.0) {
        return Err(Error::Scene(format!("source {src:?} or microphone {mic:?} outside the room")));
    }
    if (0..3).all(|i| src[i] == mic[i]) {
        return Err(Error::Scene("source and microphone coincide".into()));
    }
    let fs = cfg.sample_rate as f64;
    let len = (cfg.max_duration_s * fs).ceil() as usize;
    let mut h = vec![0.0; len];
    let beta = room.reflection();
    let order = room.max_image_order;
    let axes: Vec<Vec<(f64, usize, f64)>> = (0..3)
        .map(|i| axis_images(src[i], room.dimensions[i], beta[2 * i], beta[2 * i + 1], order))
        .collect();
    let max_dist = len as f64 / fs * cfg.speed_of_sound;
    for &(x, ox, ax) in &axes[0] {
        let dx = x - mic[0];
        for &(y, oy, ay) in &axes[1] {
            if ox + oy > order {
                continue;
            }
            let dy = y - mic[1];
            for &(z, oz, az) in &axes[2] {
                if ox + oy + oz > order {
                    continue;
                }
                let amp = ax * ay * az;
                if amp == 0.0 {
                    continue;
                }
                let dz = z - mic[2];
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                if d >= max_dist {
                    continue;
                }
                add_fractional_tap(&mut h, d / cfg.speed_of_sound * fs, amp / d, cfg.kernel_half_width);
            }
        }
    }
    Ok(h)
}
