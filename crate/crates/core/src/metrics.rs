//! Scale-invariant signal-to-distortion ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric cap applied to every reported and optimized SI-SDR value.
pub const SI_SDR_CAP_DB: f64 = 60.0;

struct Projection {
    /// `<est, ref>`
    cross: f64,
    /// `||est||^2`
    est_energy: f64,
    /// `||ref||^2`
    ref_energy: f64,
}

fn project(estimate: &[f64], reference: &[f64]) -> Result<Projection> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(ref_energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let cross = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let est_energy = estimate.iter().map(|v| v * v).sum();
    Ok(Projection {
        cross,
        est_energy,
        ref_energy,
    })
}

impl Projection {
    /// `(||s||^2, ||e - s||^2)` for the optimally scaled target `s`.
    fn energies(&self) -> (f64, f64) {
        let target = self.cross * self.cross / self.ref_energy;
        let distortion = (self.est_energy - target).max(0.0);
        (target, distortion)
    }

    fn uncapped_db(&self) -> f64 {
        let (target, distortion) = self.energies();
        if distortion == 0.0 {
            return f64::INFINITY;
        }
        if target == 0.0 {
            return f64::NEG_INFINITY;
        }
        10.0 * (target / distortion).log10()
    }
}

/// SI-SDR in dB of `estimate` against `reference`, capped to +/-60 dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let p = project(estimate, reference)?;
    Ok(p.uncapped_db().clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// SI-SDR and its gradient with respect to the estimate. The gradient is zero
/// wherever the cap is active.
pub fn si_sdr_with_grad(estimate: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    let p = project(estimate, reference)?;
    let db = p.uncapped_db();
    if !(db > -SI_SDR_CAP_DB && db < SI_SDR_CAP_DB) {
        return Ok((db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB), vec![0.0; estimate.len()]));
    }
    // db = 10/ln10 * (ln(c^2/r) - ln(q - c^2/r)), c = <e,y>, q = ||e||^2, r = ||y||^2
    let (_, distortion) = p.energies();
    let k = 10.0 / std::f64::consts::LN_10;
    let a = 2.0 / p.cross;
    let grad = estimate
        .iter()
        .zip(reference)
        .map(|(&e, &y)| k * (a * y - (2.0 * e - 2.0 * p.cross * y / p.ref_energy) / distortion))
        .collect();
    Ok((db, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub scene: String,
    pub si_sdr_db: f64,
}

/// SI-SDR per scene and its mean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub si_sdr_db: f64,
    pub scenes: Vec<SceneScore>,
}

impl MetricReport {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, scene: impl Into<String>, si_sdr_db: f64) {
        self.scenes.push(SceneScore {
            scene: scene.into(),
            si_sdr_db,
        });
        self.si_sdr_db =
            self.scenes.iter().map(|s| s.si_sdr_db).sum::<f64>() / self.scenes.len() as f64;
    }
}
