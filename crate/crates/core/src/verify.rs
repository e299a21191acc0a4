//! Self-check suite behind the `verify` subcommand: closed forms, cycle-space
//! identities, bound brackets, reduction identities and a small stochastic
//! stationary-law run, each reported as pass or fail.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::dynamics::{self, TimeGrid};
use crate::error::Result;
use crate::generators;
use crate::graph::{self, OrientedNetwork};
use crate::pseudosim::{self, ReductionMap};
use crate::schedule::CouplingSchedule;
use crate::spectral;
use crate::table;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = (&'static str, fn(u64) -> Result<(bool, String)>);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn closed_form_spectra(_: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for n in 3..=60 {
        let p = spectral::alpha_rho(&generators::path(n)?.coupling_matrix())?;
        let k = spectral::alpha_rho(&generators::complete(n)?.coupling_matrix())?;
        let nf = n as f64;
        worst = worst
            .max(rel(p.alpha, 4.0 * (PI / (2.0 * nf)).sin().powi(2)))
            .max(rel(k.alpha, nf))
            .max(rel(p.rho, (nf * nf - 1.0) / 6.0))
            .max(rel(k.rho, 1.0 - 1.0 / nf));
    }
    Ok((
        worst <= 1e-9,
        format!("max relative error {worst:.2e} for n in 3..=60"),
    ))
}

fn corpus(seed: u64) -> Result<Vec<OrientedNetwork>> {
    let mut nets = Vec::new();
    for k in 0..40u64 {
        let n = 3 + (k as usize % 12);
        let extra = (k as usize * 7) % (n * (n - 1) / 2 - (n - 1) + 1);
        nets.push(generators::random_connected(n, extra, seed.wrapping_add(k))?);
    }
    nets.push(generators::complete(6)?);
    nets.push(generators::cycle_power(12, 4)?);
    nets.push(generators::star(7)?);
    Ok(nets)
}

fn cycle_identities(seed: u64) -> Result<(bool, String)> {
    let nets = corpus(seed)?;
    let mut failures = 0;
    for net in &nets {
        let dec = graph::spanning_tree_decomposition(net)?;
        let z = dec.cycle_basis();
        let zh = &z * dec.reordered_coboundary();
        if dec.partitioned_coboundary() != *dec.reordered_coboundary() || zh.iter().any(|&v| v != 0) {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        format!(
            "{failures} of {} graphs violate H = [I; -Q]H~ or ZH = 0",
            nets.len()
        ),
    ))
}

fn kappa_orientation(seed: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (k, net) in corpus(seed)?.iter().enumerate() {
        let base = spectral::kappa(&graph::spanning_tree_decomposition(net)?);
        let flip: Vec<bool> = (0..net.m()).map(|e| (e * 31 + k) % 3 == 0).collect();
        let other = spectral::kappa(&graph::spanning_tree_decomposition(&net.reoriented(&flip)?)?);
        worst = worst.max((base - other).abs());
    }
    Ok((
        worst <= 1e-10,
        format!("max |kappa - kappa(reoriented)| = {worst:.2e}"),
    ))
}

fn kappa_disjoint(_: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let lengths: Vec<usize> = (0..=k % 4).map(|i| 3 + (i + k) % 5).collect();
        let net = generators::cycle_chain(&lengths, k % 3)?;
        let dec = graph::spanning_tree_decomposition(&net)?;
        let closed = spectral::stability_bounds(&net, &dec)
            .kappa_disjoint
            .unwrap_or(f64::NAN);
        worst = worst.max((spectral::kappa(&dec) - closed).abs());
    }
    Ok((
        worst <= 1e-10,
        format!("max deviation from disjoint-cycle closed form {worst:.2e}"),
    ))
}

fn bound_brackets(seed: u64) -> Result<(bool, String)> {
    let mut failures = 0;
    let nets = corpus(seed)?;
    for net in &nets {
        let dec = graph::spanning_tree_decomposition(net)?;
        let b = spectral::stability_bounds(net, &dec);
        let ar = spectral::alpha_rho(&net.coupling_matrix())?;
        let kappa = spectral::kappa(&dec);
        let tol = 1e-9;
        let ok = b.alpha_lower <= ar.alpha * (1.0 + tol)
            && ar.rho <= b.rho_upper * (1.0 + tol)
            && b.kappa_lower <= kappa * (1.0 + tol)
            && kappa <= b.kappa_upper * (1.0 + tol);
        if !ok {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        format!("{failures} of {} graphs outside bounds", nets.len()),
    ))
}

fn reduction_suite(seed: u64) -> Result<(bool, String)> {
    let mut worst_pair: f64 = 0.0;
    let mut worst_intertwine: f64 = 0.0;
    let mut worst_exp: f64 = 0.0;
    for k in 0..30u64 {
        let n = 3 + (k as usize % 10);
        let d = generators::random_coupling(n, seed.wrapping_add(k))?;
        let map = ReductionMap::difference(n)?;
        let r = pseudosim::reduce(&d, &map)?;
        worst_pair = worst_pair.max(pseudosim::spectrum_split(&d)?.pairing_distance);
        worst_intertwine = worst_intertwine.max(r.intertwining_residual(&d, &map) / d.norm());
        for t in [0.5, 1.0, 2.0] {
            worst_exp = worst_exp.max(pseudosim::exp_commutation_check(&d, t)?);
        }
    }
    let ok = worst_pair <= 1e-8 && worst_intertwine <= 1e-10 && worst_exp <= 1e-8;
    Ok((
        ok,
        format!("pairing {worst_pair:.1e}, intertwining {worst_intertwine:.1e}, exp {worst_exp:.1e}"),
    ))
}

fn example_convergent(_: u64) -> Result<(bool, String)> {
    let c = spectral::classify_convergent(&generators::example_matrix_38())?;
    Ok((c.convergent && c.alpha > 0.0, format!("alpha = {:.4}", c.alpha)))
}

fn stationary_law(seed: u64) -> Result<(bool, String)> {
    let d = generators::complete(5)?.coupling_matrix();
    let schedule = CouplingSchedule::constant(d.clone())?.with_sigma(0.2)?;
    let grid = TimeGrid::new(2.0, schedule.default_dt(2.0)?)?.with_records(20);
    let stats = dynamics::ensemble_statistics(&schedule, &DVector::zeros(5), grid, 2000, seed)?;
    let oracle = dynamics::integrate_moment_odes(&schedule, &DVector::zeros(4), grid)?;
    let mut worst_z: f64 = 0.0;
    for r in 1..stats.times.len() {
        let z = (stats.second_moment[r] - oracle.off_consensus_second_moment[r]) / stats.second_moment_se[r];
        worst_z = worst_z.max(z.abs());
    }
    let limit = dynamics::stationary_prediction(&d, 0.2)?.limit_second_moment;
    let late = stats.late_window_mean();
    let ok = worst_z <= 5.0 && rel(late, limit) <= 0.05;
    Ok((
        ok,
        format!("max |z| = {worst_z:.2}, plateau {late:.5} vs {limit:.5}"),
    ))
}

fn cycle_power_table(_: u64) -> Result<(bool, String)> {
    let mut cells = Vec::new();
    let mut ok = true;
    for (&n, &published) in table::TABLE_SIZES.iter().zip(&table::PUBLISHED_CYCLE) {
        let a = table::laplacian_alpha(&generators::cycle_power(n, table::TABLE_DEGREE)?);
        ok &= (a * 1000.0).round() / 1000.0 == published;
        cells.push(format!("{a:.4}"));
    }
    Ok((ok, format!("alpha(C_n) = {}", cells.join(" / "))))
}

const CHECKS: &[Check] = &[
    ("closed-form spectra of P_n and K_n", closed_form_spectra),
    ("cycle-space partition identity", cycle_identities),
    ("kappa orientation invariance", kappa_orientation),
    ("kappa disjoint-cycle closed form", kappa_disjoint),
    ("stability bounds bracket exact values", bound_brackets),
    ("pseudo-similarity reduction identities", reduction_suite),
    ("nonsymmetric example is convergent", example_convergent),
    ("stochastic plateau and moment oracle", stationary_law),
    ("cycle-power connectivity table", cycle_power_table),
];

pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| match check(seed) {
            Ok((passed, detail)) => CheckOutcome { name, passed, detail },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

pub fn render(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for o in outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status}  {:width$}  {}\n", o.name, o.detail));
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    out.push_str(&format!("{passed}/{} checks passed\n", outcomes.len()));
    out
}
