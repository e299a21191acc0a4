//! Time-dependent coupling and noise loading for `ẋ = g D(t) x + σ U(t) ẇ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum Coupling {
    Constant(DMatrix<f64>),
    /// Cycles through `matrices`, holding each for `dwell` time units.
    Switching {
        matrices: Vec<DMatrix<f64>>,
        dwell: f64,
    },
    /// Arbitrary measurable coupling; zero row sums are checked on every sample.
    Function(MatrixFn),
}

#[derive(Clone)]
pub enum NoiseLoading {
    Identity,
    Constant(DMatrix<f64>),
    Function(MatrixFn),
}

#[derive(Clone)]
pub struct CouplingSchedule {
    n: usize,
    coupling: Coupling,
    noise: NoiseLoading,
    gain: f64,
    sigma: f64,
}

impl fmt::Debug for CouplingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.coupling {
            Coupling::Constant(_) => "constant".to_string(),
            Coupling::Switching { matrices, dwell } => {
                format!("switching({} matrices, dwell {dwell})", matrices.len())
            }
            Coupling::Function(_) => "function".to_string(),
        };
        f.debug_struct("CouplingSchedule")
            .field("n", &self.n)
            .field("coupling", &kind)
            .field("gain", &self.gain)
            .field("sigma", &self.sigma)
            .finish()
    }
}

impl CouplingSchedule {
    pub fn constant(d: DMatrix<f64>) -> Result<Self> {
        linalg::ensure_zero_row_sum(&d)?;
        Ok(Self::build(d.nrows(), Coupling::Constant(d)))
    }

    pub fn switching(matrices: Vec<DMatrix<f64>>, dwell: f64) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidParameter("switching schedule needs a matrix".into()))?;
        if !(dwell > 0.0 && dwell.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dwell time must be positive, got {dwell}"
            )));
        }
        let n = first.nrows();
        for m in &matrices {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.nrows(),
                });
            }
            linalg::ensure_zero_row_sum(m)?;
        }
        Ok(Self::build(n, Coupling::Switching { matrices, dwell }))
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self::build(n, Coupling::Function(Arc::new(f)))
    }

    fn build(n: usize, coupling: Coupling) -> Self {
        Self {
            n,
            coupling,
            noise: NoiseLoading::Identity,
            gain: 1.0,
            sigma: 0.0,
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Result<Self> {
        if !(gain >= 0.0 && gain.is_finite()) {
            return Err(Error::InvalidParameter(format!("gain must be >= 0, got {gain}")));
        }
        self.gain = gain;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be >= 0, got {sigma}"
            )));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_noise(mut self, noise: NoiseLoading) -> Result<Self> {
        if let NoiseLoading::Constant(u) = &noise {
            if u.nrows() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    got: u.nrows(),
                });
            }
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn noise(&self) -> &NoiseLoading {
        &self.noise
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.coupling, Coupling::Constant(_))
    }

    /// `D(t)` without the gain.
    pub fn coupling_at(&self, t: f64) -> Result<DMatrix<f64>> {
        match &self.coupling {
            Coupling::Constant(d) => Ok(d.clone()),
            Coupling::Switching { matrices, dwell } => {
                Ok(matrices[Self::segment(t, *dwell, matrices.len())].clone())
            }
            Coupling::Function(f) => {
                let d = f(t);
                if d.nrows() != self.n || d.ncols() != self.n {
                    return Err(Error::DimensionMismatch {
                        expected: self.n,
                        got: d.nrows(),
                    });
                }
                linalg::ensure_zero_row_sum(&d)?;
                Ok(d)
            }
        }
    }

    /// `g D(t)`.
    pub fn effective_coupling_at(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.coupling_at(t)? * self.gain)
    }

    pub fn noise_at(&self, t: f64) -> DMatrix<f64> {
        match &self.noise {
            NoiseLoading::Identity => DMatrix::identity(self.n, self.n),
            NoiseLoading::Constant(u) => u.clone(),
            NoiseLoading::Function(f) => f(t),
        }
    }

    fn segment(t: f64, dwell: f64, count: usize) -> usize {
        let k = (t / dwell).floor().max(0.0) as usize;
        k % count
    }

    /// Index of the active matrix of a switching schedule at time `t`.
    pub fn switching_segment(&self, t: f64) -> Option<usize> {
        match &self.coupling {
            Coupling::Switching { matrices, dwell } => Some(Self::segment(t, *dwell, matrices.len())),
            _ => None,
        }
    }

    /// Largest `‖g D(t)‖₂` over the schedule's matrices, sampled on `[0, horizon]`
    /// for function schedules.
    pub fn norm_bound(&self, horizon: f64) -> Result<f64> {
        let norm = match &self.coupling {
            Coupling::Constant(d) => linalg::spectral_norm(d),
            Coupling::Switching { matrices, .. } => {
                matrices.iter().map(linalg::spectral_norm).fold(0.0, f64::max)
            }
            Coupling::Function(_) => {
                let mut worst = 0.0_f64;
                for k in 0..=100 {
                    let t = horizon * k as f64 / 100.0;
                    worst = worst.max(linalg::spectral_norm(&self.coupling_at(t)?));
                }
                worst
            }
        };
        Ok(norm * self.gain)
    }

    /// Default step `1e-3 / max(1, ‖g D‖₂)`.
    pub fn default_dt(&self, horizon: f64) -> Result<f64> {
        Ok(1e-3 / self.norm_bound(horizon)?.max(1.0))
    }
}
