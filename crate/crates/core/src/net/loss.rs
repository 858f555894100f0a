//! Training objective: negative SI-SDR plus log-compressed STFT L1 terms on
//! the magnitude, real part and imaginary part.

use num_complex::Complex64;

use crate::dsp::{Spectrogram, StftConfig, StftProcessor};
use crate::error::{Error, Result};
use crate::metrics::si_sdr_with_grad;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub stft: StftConfig,
    pub log_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 1.0,
            stft: StftConfig::default(),
            log_floor: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.log_floor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be nonnegative and the floor positive: {self:?}"
            )));
        }
        self.stft.validate()
    }
}

/// The individual loss components. The L1 terms are unweighted means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub si_sdr_db: f64,
    pub log_mag: f64,
    pub log_re: f64,
    pub log_im: f64,
    pub total: f64,
}

fn floored_ln(v: f64, floor: f64) -> f64 {
    v.abs().max(floor).ln()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Prepared {
    proc: StftProcessor<f64>,
    est: Spectrogram,
    target: Spectrogram,
}

fn prepare(estimate: &[f64], target: &[f64], cfg: &LossConfig) -> Result<Prepared> {
    cfg.validate()?;
    if estimate.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, target {}",
            estimate.len(),
            target.len()
        )));
    }
    let proc = StftProcessor::new(cfg.stft)?;
    let est = proc.stft(estimate)?;
    let target = proc.stft(target)?;
    Ok(Prepared { proc, est, target })
}

fn terms(p: &Prepared, si_sdr_db: f64, cfg: &LossConfig) -> LossTerms {
    let fl = cfg.log_floor;
    let n = p.est.data().len() as f64;
    let (mut mag, mut re, mut im) = (0.0, 0.0, 0.0);
    for (e, y) in p.est.data().iter().zip(p.target.data()) {
        mag += (floored_ln(y.norm(), fl) - floored_ln(e.norm(), fl)).abs();
        re += (floored_ln(y.re, fl) - floored_ln(e.re, fl)).abs();
        im += (floored_ln(y.im, fl) - floored_ln(e.im, fl)).abs();
    }
    let (mag, re, im) = (mag / n, re / n, im / n);
    LossTerms {
        si_sdr_db,
        log_mag: mag,
        log_re: re,
        log_im: im,
        total: -si_sdr_db + cfg.lambda1 * mag + cfg.lambda2 * (re + im),
    }
}

pub fn loss_terms(estimate: &[f64], target: &[f64], cfg: &LossConfig) -> Result<LossTerms> {
    let p = prepare(estimate, target, cfg)?;
    let sdr = crate::metrics::si_sdr(estimate, target)?;
    Ok(terms(&p, sdr, cfg))
}

pub fn loss(estimate: &[f64], target: &[f64], cfg: &LossConfig) -> Result<f64> {
    Ok(loss_terms(estimate, target, cfg)?.total)
}

/// Loss and its gradient with respect to `estimate`. At a floored log or a
/// zero difference the subgradient zero is used.
pub fn loss_with_grad(estimate: &[f64], target: &[f64], cfg: &LossConfig) -> Result<(LossTerms, Vec<f64>)> {
    let p = prepare(estimate, target, cfg)?;
    let (sdr, sdr_grad) = si_sdr_with_grad(estimate, target)?;
    let t = terms(&p, sdr, cfg);

    let fl = cfg.log_floor;
    let n = p.est.data().len() as f64;
    let (c_mag, c_part) = (cfg.lambda1 / n, cfg.lambda2 / n);
    let mut g = Spectrogram::zeros(p.est.frames(), cfg.stft);
    for ((gv, e), y) in g.data_mut().iter_mut().zip(p.est.data()).zip(p.target.data()) {
        let mut d = Complex64::new(0.0, 0.0);
        let a2 = e.norm_sqr();
        if a2.sqrt() > fl {
            let s = -c_mag * sign(floored_ln(y.norm(), fl) - floored_ln(e.norm(), fl));
            d += e * (s / a2);
        }
        if e.re.abs() > fl {
            d.re += -c_part * sign(floored_ln(y.re, fl) - floored_ln(e.re, fl)) / e.re;
        }
        if e.im.abs() > fl {
            d.im += -c_part * sign(floored_ln(y.im, fl) - floored_ln(e.im, fl)) / e.im;
        }
        *gv = d;
    }
    let mut grad = p.proc.stft_adjoint(&g, estimate.len());
    for (gv, s) in grad.iter_mut().zip(sdr_grad) {
        *gv -= s;
    }
    Ok((t, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn perfect_estimate_hits_the_cap() {
        let y = noise(1, 2048);
        let t = loss_terms(&y, &y, &LossConfig::default()).unwrap();
        assert_eq!(t.total, -60.0);
    }

    #[test]
    fn doubled_estimate_costs_log_two_per_entry() {
        let cfg = LossConfig::default();
        let y = noise(2, 4096);
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let t = loss_terms(&y2, &y, &cfg).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let f = cfg.stft.num_bins() as f64;
        // The imaginary parts at DC and Nyquist are zero and sit on the floor.
        let expected = cfg.lambda1 * ln2 + cfg.lambda2 * ln2 + cfg.lambda2 * ln2 * (f - 2.0) / f;
        assert_eq!(t.si_sdr_db, 60.0);
        assert!((t.total + 60.0 - expected).abs() < 1e-9, "{} vs {expected}", t.total + 60.0);
    }

    #[test]
    fn zero_target_is_an_error() {
        let z = vec![0.0; 1024];
        assert!(matches!(loss(&noise(3, 1024), &z, &LossConfig::default()), Err(Error::ZeroEnergy)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = LossConfig::default();
        let y = noise(4, 1024);
        let est: Vec<f64> = y.iter().zip(noise(5, 1024)).map(|(a, b)| a + 0.5 * b).collect();
        let (_, g) = loss_with_grad(&est, &y, &cfg).unwrap();
        let mut e = est.clone();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..40 {
            let i = rng.gen_range(0..e.len());
            e[i] = est[i] + h;
            let up = loss(&e, &y, &cfg).unwrap();
            e[i] = est[i] - h;
            let dn = loss(&e, &y, &cfg).unwrap();
            e[i] = est[i];
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-3, "sample {i}: fd {fd} analytic {}", g[i]);
        }
    }
}
