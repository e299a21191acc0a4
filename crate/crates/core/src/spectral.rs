//! Convergence classification and stability measures.
//!
//! * `α`: algebraic connectivity, `−max_{i≥2} Re λ_i(D)`, the convergence rate.
//! * `ρ`: total effective resistance `Σ_{i≥2} 1/λ_i(−D)`.
//! * `κ`: `Tr (I + QᵀQ)^{-1}`, the stationary dispersion of tree-edge differences.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{cycle_stats, spanning_tree_decomposition, OrientedNetwork, TreeCycleDecomposition};
use crate::linalg::{self, Complex64};
use crate::pseudosim::{self, ReductionMap};
use crate::schedule::CouplingSchedule;

/// Relative threshold separating stable modes from neutral ones.
pub const STABILITY_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Convergence {
    pub convergent: bool,
    pub alpha: f64,
}

/// Convergent iff `D̂` is stable: every `Re λ(D̂) < −ε·max(1, ‖D‖₂)`.
pub fn classify_convergent(d: &DMatrix<f64>) -> Result<Convergence> {
    let reduced = pseudosim::reduce_default(d)?;
    let ev = linalg::eigenvalues(&reduced.d_hat)?;
    let max_re = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let threshold = STABILITY_EPS * linalg::spectral_norm(d).max(1.0);
    Ok(Convergence {
        convergent: max_re < -threshold,
        alpha: -max_re,
    })
}

/// Undirected criterion: convergent iff `C₁ + QᵀC₂Q` is positive definite.
pub fn classify_undirected(dec: &TreeCycleDecomposition) -> bool {
    let form = dec.weighted_tree_form();
    let ev = linalg::symmetric_eigenvalues(&form);
    let scale = ev.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    ev.first().is_some_and(|&lo| lo > STABILITY_EPS * scale)
}

pub fn classify_undirected_network(net: &OrientedNetwork) -> Result<bool> {
    if net.is_directed() {
        return Err(Error::NotUndirected);
    }
    Ok(classify_undirected(&spanning_tree_decomposition(net)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaRho {
    pub alpha: f64,
    pub rho: f64,
}

/// `α = λ₂(−D)` and `ρ = Σ_{i≥2} 1/λ_i(−D)` for symmetric `D`; for normal `D`
/// the eigenvalues of the symmetric part are used instead.
pub fn alpha_rho(d: &DMatrix<f64>) -> Result<AlphaRho> {
    let n = linalg::ensure_square(d)?;
    if n < 2 {
        return Err(Error::DimensionTooSmall(n));
    }
    let neg = if linalg::is_symmetric(d, 1e-14) {
        -d
    } else {
        let comm = linalg::commutator_norm(d);
        if comm > 1e-9 * d.norm().powi(2).max(1.0) {
            return Err(Error::NotNormal(comm));
        }
        -linalg::symmetric_part(d)
    };
    alpha_rho_from_spectrum(&linalg::symmetric_eigenvalues(&neg))
}

fn alpha_rho_from_spectrum(ev: &[f64]) -> Result<AlphaRho> {
    let top = ev.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let tol = STABILITY_EPS * top;
    let zeros = ev.iter().filter(|v| v.abs() <= tol).count();
    if let Some(&neg) = ev.iter().find(|&&v| v < -tol) {
        return Err(Error::Indefinite(neg));
    }
    if zeros != 1 {
        return Err(Error::MultipleZeroEVs(zeros));
    }
    let rest = &ev[1..];
    Ok(AlphaRho {
        alpha: rest[0],
        rho: rest.iter().map(|v| v.recip()).sum(),
    })
}

/// `κ = Tr (I_{n−1} + QᵀQ)^{-1}`.
pub fn kappa(dec: &TreeCycleDecomposition) -> f64 {
    linalg::symmetric_eigenvalues(&dec.unit_tree_form())
        .iter()
        .map(|v| v.recip())
        .sum()
}

/// Alon–Boppana ceiling `g(d) = d − 2√(d−1)`.
pub fn alon_boppana(d: usize) -> f64 {
    let d = d as f64;
    d - 2.0 * (d - 1.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityBounds {
    /// `α(G̃) · λ₁(I + QᵀQ) ≤ α(G)`.
    pub alpha_lower: f64,
    /// `ρ(G) ≤ min{ρ(G̃)/λ₁(I+QᵀQ), Tr(I+QᵀQ)^{-1}/α(G̃)}`.
    pub rho_upper: f64,
    /// Best available lower bound on `κ`.
    pub kappa_lower: f64,
    /// `(n−1)/(1+μ)` with `μ` the mean excess cycle length.
    pub kappa_lower_mean_length: f64,
    /// `(n−1) − c(1 − 1/δ)`, valid when `0 < c < n − 1`.
    pub kappa_lower_overlap: Option<f64>,
    pub kappa_upper: f64,
    /// Closed form of `κ` when the fundamental cycles are edge-disjoint.
    pub kappa_disjoint: Option<f64>,
    /// `g(d)` for `d`-regular graphs with `d ≥ 3`.
    pub alon_boppana: Option<f64>,
    /// `2d (2 log₂ n / diam)²` for `d`-regular graphs.
    pub diameter_bound: Option<f64>,
    /// Algebraic connectivity of the spanning tree.
    pub tree_alpha: f64,
}

pub fn stability_bounds(net: &OrientedNetwork, dec: &TreeCycleDecomposition) -> StabilityBounds {
    let n = dec.n();
    let n1 = (n - 1) as f64;
    let c = dec.corank();

    let h = dec.h_tilde_f64();
    let tree_ev = linalg::symmetric_eigenvalues(&(&h * h.transpose()));
    let tree_alpha = tree_ev.first().copied().unwrap_or(0.0);
    let tree_rho: f64 = tree_ev.iter().map(|v| v.recip()).sum();
    let form_ev = linalg::symmetric_eigenvalues(&dec.unit_tree_form());
    let lambda1 = form_ev.first().copied().unwrap_or(1.0);
    let trace_inv: f64 = form_ev.iter().map(|v| v.recip()).sum();

    let stats = cycle_stats(dec);
    let kappa_lower_mean_length = n1 / (1.0 + stats.mu);
    let kappa_lower_overlap =
        (c > 0 && (c as f64) < n1).then(|| n1 - c as f64 * (1.0 - 1.0 / stats.delta as f64));
    let kappa_lower = kappa_lower_overlap.map_or(kappa_lower_mean_length, |o| o.max(kappa_lower_mean_length));
    let kappa_disjoint = (c > 0 && stats.disjoint)
        .then(|| n1 - c as f64 + stats.lengths.iter().map(|&l| 1.0 / l as f64).sum::<f64>());

    let regular = net.regular_degree();
    let alon_boppana = regular.filter(|&d| d >= 3).map(alon_boppana);
    let diameter_bound = regular.zip(net.diameter()).and_then(|(d, diam)| {
        (diam > 0).then(|| {
            let ratio = 2.0 * (n as f64).log2() / diam as f64;
            2.0 * d as f64 * ratio * ratio
        })
    });

    StabilityBounds {
        alpha_lower: tree_alpha * lambda1,
        rho_upper: (tree_rho / lambda1).min(trace_inv / tree_alpha),
        kappa_lower,
        kappa_lower_mean_length,
        kappa_lower_overlap,
        kappa_upper: n1,
        kappa_disjoint,
        alon_boppana,
        diameter_bound,
        tree_alpha,
    }
}

/// `−λ_max(D̂ˢ)`; positive exactly when `D̂` is uniformly dissipative.
pub fn dissipativity_margin(d_hat: &DMatrix<f64>) -> f64 {
    -linalg::max_symmetric_part_eigenvalue(d_hat)
}

/// Trapezoid estimate of `T⁻¹ ∫₀ᵀ λ_max(g D̂ˢ(u)) du`. A negative value
/// certifies dissipativity on time average.
pub fn asymptotic_dissipativity_estimate(schedule: &CouplingSchedule, horizon: f64, dt: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need positive horizon and step, got T={horizon}, dt={dt}"
        )));
    }
    let map = ReductionMap::difference(schedule.n())?;
    let integrand = |t: f64| -> Result<f64> {
        let d = schedule.effective_coupling_at(t)?;
        let d_hat = map.s() * d * map.s_plus();
        Ok(linalg::max_symmetric_part_eigenvalue(&d_hat))
    };
    let steps = (horizon / dt).ceil() as usize;
    let mut total = 0.0;
    let mut t0 = 0.0;
    let mut f0 = integrand(0.0)?;
    for k in 1..=steps {
        let t1 = (k as f64 * dt).min(horizon);
        let f1 = integrand(t1)?;
        total += 0.5 * (f0 + f1) * (t1 - t0);
        t0 = t1;
        f0 = f1;
    }
    Ok(total / horizon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Eigenvalue {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralReport {
    pub n: usize,
    pub m: Option<usize>,
    pub alpha: f64,
    pub rho: Option<f64>,
    pub kappa: Option<f64>,
    pub convergent: bool,
    pub margin: f64,
    pub bounds: Option<StabilityBounds>,
    pub eigenvalues: Vec<Eigenvalue>,
}

/// Report for a bare coupling matrix: `α`, margin and, for normal `D`, `ρ`.
pub fn analyze_coupling(d: &DMatrix<f64>) -> Result<SpectralReport> {
    let n = linalg::ensure_square(d)?;
    let conv = classify_convergent(d)?;
    let reduced = pseudosim::reduce_default(d)?;
    let rho = if conv.convergent {
        alpha_rho(d).ok().map(|ar| ar.rho)
    } else {
        None
    };
    Ok(SpectralReport {
        n,
        m: None,
        alpha: conv.alpha,
        rho,
        kappa: None,
        convergent: conv.convergent,
        margin: dissipativity_margin(&reduced.d_hat),
        bounds: None,
        eigenvalues: linalg::eigenvalues(d)?
            .into_iter()
            .map(Eigenvalue::from)
            .collect(),
    })
}

/// Full report for a network. `κ` is given for connected undirected networks
/// and the bounds additionally require unit conductances.
pub fn analyze(net: &OrientedNetwork) -> Result<SpectralReport> {
    let mut report = analyze_coupling(&net.coupling_matrix())?;
    report.m = Some(net.m());
    if !net.is_directed() && net.is_connected() {
        let dec = spanning_tree_decomposition(net)?;
        report.kappa = Some(kappa(&dec));
        if net.is_simple() {
            report.bounds = Some(stability_bounds(net, &dec));
        }
    }
    Ok(report)
}
