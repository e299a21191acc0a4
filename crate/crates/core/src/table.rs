//! Algebraic connectivity of the regular cycle-power family and the random
//! bipartite permutation family at `d = 4`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::generators;
use crate::graph::OrientedNetwork;
use crate::linalg;
use crate::spectral;

pub const TABLE_SIZES: [usize; 3] = [100, 200, 400];
pub const TABLE_DEGREE: usize = 4;
pub const PUBLISHED_CYCLE: [f64; 3] = [0.020, 0.005, 0.001];
pub const PUBLISHED_BIPARTITE: [f64; 3] = [0.597, 0.554, 0.547];

/// Second-smallest Laplacian eigenvalue; zero for disconnected graphs.
pub fn laplacian_alpha(net: &OrientedNetwork) -> f64 {
    linalg::symmetric_eigenvalues(&net.laplacian())[1]
}

#[derive(Clone, Debug, Serialize)]
pub struct TableReproduction {
    pub sizes: Vec<usize>,
    pub cycle_alpha: Vec<f64>,
    /// `bipartite_samples[k][s]`: seed `s` at size `sizes[k]`.
    pub bipartite_samples: Vec<Vec<f64>>,
    pub bipartite_median: Vec<f64>,
    pub limit: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// `n` counts vertices in both families, so the bipartite graph of size `n`
/// has `n/2` vertices per side. Seeds are `base_seed .. base_seed + seeds`.
pub fn reproduce(seeds: usize, base_seed: u64) -> Result<TableReproduction> {
    let mut cycle_alpha = Vec::new();
    let mut bipartite_samples = Vec::new();
    for &n in &TABLE_SIZES {
        cycle_alpha.push(laplacian_alpha(&generators::cycle_power(n, TABLE_DEGREE)?));
        let samples = (0..seeds as u64)
            .into_par_iter()
            .map(|s| {
                let g = generators::random_bipartite_permutation(n / 2, TABLE_DEGREE, base_seed + s)?;
                Ok(laplacian_alpha(&g))
            })
            .collect::<Result<Vec<_>>>()?;
        bipartite_samples.push(samples);
    }
    Ok(TableReproduction {
        sizes: TABLE_SIZES.to_vec(),
        bipartite_median: bipartite_samples.iter().map(|s| median(s)).collect(),
        cycle_alpha,
        bipartite_samples,
        limit: spectral::alon_boppana(TABLE_DEGREE),
    })
}

impl TableReproduction {
    /// Wide CSV: one row per family, one column per size, then the limit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for n in &self.sizes {
            out.push_str(&format!(",n{n}"));
        }
        out.push_str(",limit\n");
        let row = |name: &str, vals: &[f64]| {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:.4}")).collect();
            format!("{name},{},{:.4}\n", cells.join(","), self.limit)
        };
        out.push_str(&row("alpha_cycle_power", &self.cycle_alpha));
        out.push_str(&row("alpha_bipartite_median", &self.bipartite_median));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_small_sets() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn laplacian_alpha_closed_forms() {
        let p = generators::path(6).unwrap();
        let expected = 4.0 * (std::f64::consts::PI / 12.0).sin().powi(2);
        assert!((laplacian_alpha(&p) - expected).abs() < 1e-12);
        let split = OrientedNetwork::simple(4, [(0, 1), (2, 3)]).unwrap();
        assert!(laplacian_alpha(&split).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let t = TableReproduction {
            sizes: vec![100, 200],
            cycle_alpha: vec![0.02, 0.005],
            bipartite_samples: vec![vec![0.6], vec![0.55]],
            bipartite_median: vec![0.6, 0.55],
            limit: 0.5359,
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "row,n100,n200,limit");
        assert_eq!(lines[1], "alpha_cycle_power,0.0200,0.0050,0.5359");
        assert_eq!(lines.len(), 3);
    }
}
