//! Recursive multi-channel Wiener filter driven by the network estimate, and
//! the min-magnitude post-filter.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienerConfig {
    pub alpha_xx: f64,
    pub alpha_xy: f64,
    /// Diagonal loading relative to `trace(Phi_xx) / M`.
    pub loading: f64,
    /// Lower bound of the post-filter mask.
    pub pp_floor: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self {
            alpha_xx: 0.01,
            alpha_xy: 0.03,
            loading: 1e-6,
            pp_floor: 0.1,
        }
    }
}

impl WienerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |a: f64| a > 0.0 && a < 1.0;
        if !unit(self.alpha_xx) || !unit(self.alpha_xy) {
            return Err(Error::InvalidConfig(format!(
                "smoothing factors must lie in (0, 1): {} {}",
                self.alpha_xx, self.alpha_xy
            )));
        }
        if !(self.loading >= 0.0) || !(0.0..=1.0).contains(&self.pp_floor) {
            return Err(Error::InvalidConfig("loading must be >= 0 and floor in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-bin covariance state: `Phi_xx` is `[F][M][M]`, `Phi_xy` is `[F][M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerState {
    config: WienerConfig,
    bins: usize,
    mics: usize,
    reference: usize,
    phi_xx: Vec<Complex64>,
    phi_xy: Vec<Complex64>,
    h: Vec<Complex64>,
    initialized: bool,
    warnings: usize,
}

fn check_finite(v: &[Complex64], what: &str) -> Result<()> {
    if v.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} frame")))
    }
}

impl WienerState {
    pub fn new(bins: usize, mics: usize, reference: usize, config: WienerConfig) -> Result<Self> {
        config.validate()?;
        if mics == 0 || reference >= mics {
            return Err(Error::InvalidConfig(format!("reference {reference} of {mics} microphones")));
        }
        let mut h = vec![Complex64::new(0.0, 0.0); bins * mics];
        for f in 0..bins {
            h[f * mics + reference] = Complex64::new(1.0, 0.0);
        }
        Ok(Self {
            config,
            bins,
            mics,
            reference,
            phi_xx: vec![Complex64::new(0.0, 0.0); bins * mics * mics],
            phi_xy: vec![Complex64::new(0.0, 0.0); bins * mics],
            h,
            initialized: false,
            warnings: 0,
        })
    }

    pub fn config(&self) -> &WienerConfig {
        &self.config
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Number of bins where the solve failed and the reference was passed through.
    pub fn warnings(&self) -> usize {
        self.warnings
    }

    pub fn phi_xx(&self, f: usize) -> DMatrix<Complex64> {
        let m = self.mics;
        DMatrix::from_row_slice(m, m, &self.phi_xx[f * m * m..(f + 1) * m * m])
    }

    pub fn phi_xy(&self, f: usize) -> DVector<Complex64> {
        DVector::from_row_slice(&self.phi_xy[f * self.mics..(f + 1) * self.mics])
    }

    /// Filter of the last solve for bin `f` (`[M]`).
    pub fn filter(&self, f: usize) -> &[Complex64] {
        &self.h[f * self.mics..(f + 1) * self.mics]
    }

    /// Overwrites the covariances of one bin (for analytic checks).
    pub fn set_covariances(&mut self, f: usize, phi_xx: &DMatrix<Complex64>, phi_xy: &DVector<Complex64>) {
        let m = self.mics;
        for i in 0..m {
            for j in 0..m {
                self.phi_xx[(f * m + i) * m + j] = phi_xx[(i, j)];
            }
            self.phi_xy[f * m + i] = phi_xy[i];
        }
        self.initialized = true;
    }

    fn loading(&self, f: usize) -> f64 {
        let m = self.mics;
        let trace: f64 = (0..m).map(|i| self.phi_xx[(f * m + i) * m + i].re).sum();
        self.config.loading * trace / m as f64
    }

    /// Recursive covariance update with the frame `x` (`[F][M]`) and the
    /// network estimate `y` (`[F]`).
    pub fn update(&mut self, x: &[Complex64], y: &[Complex64]) -> Result<()> {
        let (m, bins) = (self.mics, self.bins);
        if x.len() != bins * m || y.len() != bins {
            return Err(Error::ShapeMismatch(format!(
                "frame of {} / {} values, expected {} / {}",
                x.len(),
                y.len(),
                bins * m,
                bins
            )));
        }
        check_finite(x, "noisy")?;
        check_finite(y, "estimate")?;
        let (axx, axy) = if self.initialized {
            (self.config.alpha_xx, self.config.alpha_xy)
        } else {
            (1.0, 1.0)
        };
        for f in 0..bins {
            let xf = &x[f * m..(f + 1) * m];
            let yc = y[f].conj();
            let pxx = &mut self.phi_xx[f * m * m..(f + 1) * m * m];
            for i in 0..m {
                for j in 0..m {
                    let v = &mut pxx[i * m + j];
                    *v = *v * (1.0 - axx) + xf[i] * xf[j].conj() * axx;
                }
            }
            for (p, &xi) in self.phi_xy[f * m..(f + 1) * m].iter_mut().zip(xf) {
                *p = *p * (1.0 - axy) + xi * yc * axy;
            }
            if !self.initialized {
                let lambda = self.loading(f);
                for i in 0..m {
                    self.phi_xx[(f * m + i) * m + i] += lambda;
                }
            }
        }
        self.initialized = true;
        Ok(())
    }

    /// Solves `(Phi_xx + lambda I) h = Phi_xy` per bin and writes `h^H x`.
    pub fn solve_and_filter(&mut self, x: &[Complex64], out: &mut [Complex64]) {
        let m = self.mics;
        for f in 0..self.bins {
            let xf = &x[f * m..(f + 1) * m];
            let lambda = self.loading(f);
            let solved = if lambda > 0.0 && lambda.is_finite() {
                let mut a = self.phi_xx(f);
                for i in 0..m {
                    a[(i, i)] += lambda;
                }
                a.lu().solve(&self.phi_xy(f)).filter(|h| h.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
            } else {
                None
            };
            let hf = &mut self.h[f * m..(f + 1) * m];
            match solved {
                Some(h) => hf.copy_from_slice(h.as_slice()),
                None => {
                    // An all-zero history has nothing to solve; anything else is a failure.
                    if lambda != 0.0 {
                        self.warnings += 1;
                        log::warn!("Wiener solve failed at bin {f}; passing the reference through");
                    }
                    hf.fill(Complex64::new(0.0, 0.0));
                    hf[self.reference] = Complex64::new(1.0, 0.0);
                }
            }
            out[f] = hf.iter().zip(xf).map(|(h, x)| h.conj() * x).sum();
        }
    }

    /// `update` followed by `solve_and_filter`.
    pub fn process(&mut self, x: &[Complex64], y: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        self.update(x, y)?;
        self.solve_and_filter(x, out);
        Ok(())
    }
}

/// `clamp(|a| / |b|, floor, 1)`, and 1 where `|b| = 0`.
pub fn postprocess_mask(fovnet: Complex64, mcwf: Complex64, floor: f64) -> f64 {
    let b = mcwf.norm();
    if b == 0.0 {
        1.0
    } else {
        (fovnet.norm() / b).clamp(floor, 1.0)
    }
}

pub fn postprocess(fovnet: &[Complex64], mcwf: &[Complex64], floor: f64, out: &mut [Complex64]) {
    for ((o, &a), &b) in out.iter_mut().zip(fovnet).zip(mcwf) {
        *o = b * postprocess_mask(a, b, floor);
    }
}
