//! Block-wise sine-basis statistics of the observed returns.
//!
//! On block `k` of length `h` and frequency `j ≥ 1`
//!
//! ```text
//! Φ_jk(t) = √(2h)/(jπ) · sin(jπ(t − kh)/h) · 1[kh, (k+1)h)(t)
//! S_jk    = (jπ/h) · Σ_i ΔY_i · Φ_jk((t_{i−1} + t_i)/2)
//! ```
//!
//! A return belongs to the block containing its interval midpoint, so a
//! return that straddles a block boundary is attributed wholly to one block.
//!
//! With `A^p_jk(t)` the step function equal to `√(2/h) sin(jπ(m_i − kh)/h)` on
//! the interval of each return `i` of asset `p` attributed to block `k`, a
//! locally constant covariance gives `E[S^p_jk S^q_jk] = Σ_pq ∫ A^p_jk A^q_jk`
//! up to noise. The integral, the signal overlap, is one for a continuous
//! record; asynchronous sampling shrinks it for `p ≠ q` as `j` grows.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;

use crate::data::{BlockGrid, ObservationSeries, Panel};
use crate::error::{Error, Result};

/// Spectral statistics of one block: row `j−1`, column `p` holds `S_jk` for
/// asset `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStats {
    pub block: usize,
    pub values: DMatrix<f64>,
    /// Number of returns of each asset whose midpoint falls in the block.
    pub counts: Vec<usize>,
    /// Signal overlap matrices `∫ A^p_jk A^q_jk`, entry `j−1`, when computed.
    pub overlap: Option<Vec<DMatrix<f64>>>,
}

impl SpectralStats {
    pub fn num_frequencies(&self) -> usize {
        self.values.nrows()
    }

    /// The d-vector `S_jk` for frequency `j ≥ 1`.
    pub fn frequency(&self, j: usize) -> nalgebra::DVector<f64> {
        self.values.row(j - 1).transpose()
    }
}

#[inline]
pub(crate) fn block_index(t: f64, h: f64) -> i64 {
    (t / h).floor() as i64
}

/// The sine basis function `Φ_jk(t)`.
pub fn phi(j: usize, k: usize, h: f64, t: f64) -> f64 {
    if block_index(t, h) != k as i64 {
        return 0.0;
    }
    let jf = j as f64;
    (2.0 * h).sqrt() / (jf * PI) * (jf * PI * (t - k as f64 * h) / h).sin()
}

/// `S_jk` for a single asset, summed directly from the definition.
pub fn spectral_statistic(series: &ObservationSeries, j: usize, k: usize, h: f64) -> f64 {
    let t = series.times();
    let y = series.log_prices();
    let sum: f64 = (1..t.len())
        .map(|i| (y[i] - y[i - 1]) * phi(j, k, h, 0.5 * (t[i - 1] + t[i])))
        .sum();
    PI * j as f64 / h * sum
}

/// Spectral statistics for every block of the grid, frequencies `1..=j_count`.
pub fn block_spectra(panel: &Panel, grid: &BlockGrid, j_count: usize) -> Vec<SpectralStats> {
    let d = panel.dim();
    let mut out: Vec<SpectralStats> = (0..grid.num_blocks)
        .map(|k| SpectralStats {
            block: k,
            values: DMatrix::zeros(j_count, d),
            counts: vec![0; d],
            overlap: None,
        })
        .collect();

    let h = grid.h;
    let scale = (2.0 / h).sqrt();
    let mut sines = vec![0.0; j_count];
    for (p, series) in panel.series().iter().enumerate() {
        let t = series.times();
        let y = series.log_prices();
        for i in 1..t.len() {
            let mid = 0.5 * (t[i - 1] + t[i]);
            let k = block_index(mid, h);
            if k < 0 || k as usize >= grid.num_blocks {
                continue;
            }
            let k = k as usize;
            let dy = y[i] - y[i - 1];
            let stats = &mut out[k];
            stats.counts[p] += 1;
            if dy == 0.0 {
                continue;
            }
            sine_ladder(PI * (mid - k as f64 * h) / h, &mut sines);
            let a = dy * scale;
            for (j, s) in sines.iter().enumerate() {
                stats.values[(j, p)] += a * s;
            }
        }
    }
    out
}

/// Attaches the signal overlap matrices for frequencies `1..=j_count` to
/// every block's statistics.
pub fn attach_signal_overlap(spectra: &mut [SpectralStats], panel: &Panel, grid: &BlockGrid, j_count: usize) {
    let h = grid.h;
    let nb = grid.num_blocks;
    let d = panel.dim();
    let scale = (2.0 / h).sqrt();
    // per asset, the range of returns (by right endpoint) attributed to each block
    let ranges: Vec<Vec<Option<(usize, usize)>>> = panel
        .series()
        .iter()
        .map(|series| {
            let t = series.times();
            let mut r = vec![None; nb];
            for i in 1..t.len() {
                let k = block_index(0.5 * (t[i - 1] + t[i]), h);
                if k >= 0 && (k as usize) < nb {
                    let slot: &mut Option<(usize, usize)> = &mut r[k as usize];
                    *slot = Some(slot.map_or((i, i), |(a, _)| (a, i)));
                }
            }
            r
        })
        .collect();

    for (k, stats) in spectra.iter_mut().enumerate().take(nb) {
        // interval bounds and scaled sines of each asset's returns in block k
        let blocks: Vec<(Vec<(f64, f64)>, Vec<f64>)> = panel
            .series()
            .iter()
            .enumerate()
            .map(|(p, series)| {
                let t = series.times();
                let Some((first, last)) = ranges[p][k] else {
                    return (Vec::new(), Vec::new());
                };
                let mut bounds = Vec::with_capacity(last - first + 1);
                let mut sines = vec![0.0; (last - first + 1) * j_count];
                for (row, i) in (first..=last).enumerate() {
                    bounds.push((t[i - 1], t[i]));
                    let mid = 0.5 * (t[i - 1] + t[i]);
                    let out = &mut sines[row * j_count..(row + 1) * j_count];
                    sine_ladder(PI * (mid - k as f64 * h) / h, out);
                    out.iter_mut().for_each(|x| *x *= scale);
                }
                (bounds, sines)
            })
            .collect();

        let mut mats = vec![DMatrix::zeros(d, d); j_count];
        let mut acc = vec![0.0; j_count];
        for p in 0..d {
            for q in p..d {
                acc.iter_mut().for_each(|x| *x = 0.0);
                let (bp, sp) = &blocks[p];
                let (bq, sq) = &blocks[q];
                let (mut i, mut l) = (0, 0);
                while i < bp.len() && l < bq.len() {
                    let overlap = bp[i].1.min(bq[l].1) - bp[i].0.max(bq[l].0);
                    if overlap > 0.0 {
                        let a = &sp[i * j_count..(i + 1) * j_count];
                        let b = &sq[l * j_count..(l + 1) * j_count];
                        for j in 0..j_count {
                            acc[j] += overlap * a[j] * b[j];
                        }
                    }
                    let (ei, el) = (bp[i].1, bq[l].1);
                    if ei <= el {
                        i += 1;
                    }
                    if el <= ei {
                        l += 1;
                    }
                }
                for (m, &v) in mats.iter_mut().zip(&acc) {
                    m[(p, q)] = v;
                    m[(q, p)] = v;
                }
            }
        }
        stats.overlap = Some(mats);
    }
}

/// Fills `out[j−1] = sin(j·x)` by complex rotation, re-anchored periodically
/// so the rounding error stays at a few ulps for any cutoff.
pub(crate) fn sine_ladder(x: f64, out: &mut [f64]) {
    const REANCHOR: usize = 32;
    let (s1, c1) = x.sin_cos();
    let (mut s, mut c) = (s1, c1);
    for (idx, slot) in out.iter_mut().enumerate() {
        if idx > 0 {
            if idx % REANCHOR == 0 {
                let (sa, ca) = ((idx + 1) as f64 * x).sin_cos();
                s = sa;
                c = ca;
            } else {
                let sn = s * c1 + c * s1;
                c = c * c1 - s * s1;
                s = sn;
            }
        }
        *slot = s;
    }
}

/// Writes spectra as `block,frequency,asset,value` rows.
pub fn write_spectra_csv<W: Write>(mut w: W, spectra: &[SpectralStats], assets: &[&str]) -> Result<()> {
    let io = |e: std::io::Error| Error::Input(format!("writing spectra: {e}"));
    writeln!(w, "block,frequency,asset,value,contributing_returns").map_err(io)?;
    for st in spectra {
        for j in 0..st.values.nrows() {
            for (p, asset) in assets.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{:e},{}",
                    st.block,
                    j + 1,
                    asset,
                    st.values[(j, p)],
                    st.counts[p]
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Panel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(times: Vec<f64>, prices: Vec<f64>) -> ObservationSeries {
        ObservationSeries::new("A", times, prices).unwrap()
    }

    fn random_walk(seed: u64, n: usize, name: &str) -> ObservationSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut y = 0.0;
        let prices = times
            .iter()
            .map(|_| {
                y += rng.random::<f64>() - 0.5;
                y
            })
            .collect();
        ObservationSeries::new(name, times, prices).unwrap()
    }

    #[test]
    fn phi_closed_form() {
        assert!((phi(1, 0, 1.0, 0.5) - 2f64.sqrt() / PI).abs() < 1e-15);
        assert!((phi(1, 0, 1.0, 0.5) - 0.450_16).abs() < 1e-5);
        assert_eq!(phi(3, 2, 0.1, 0.2), 0.0);
        assert_eq!(phi(1, 2, 0.1, 0.35), 0.0);
        assert_eq!(phi(1, 2, 0.1, 0.1), 0.0);
    }

    #[test]
    fn constant_prices_give_zero() {
        let s = series(vec![0.0, 0.2, 0.4, 0.6, 0.9], vec![1.0; 5]);
        for j in 1..4 {
            for k in 0..4 {
                assert_eq!(spectral_statistic(&s, j, k, 0.25), 0.0);
            }
        }
        let panel = Panel::new(vec![s]).unwrap();
        let grid = BlockGrid {
            h: 0.25,
            num_blocks: 4,
            j_max: 3,
            k_half: 1,
        };
        for st in block_spectra(&panel, &grid, 3) {
            assert!(st.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_return_at_block_centre() {
        // one return with midpoint at the centre of block 1 (h = 0.25)
        let h: f64 = 0.25;
        let s = series(vec![0.3, 0.45], vec![0.0, 1.0]);
        let expected = (2.0 / h).sqrt();
        assert!((spectral_statistic(&s, 1, 1, h) - expected).abs() < 1e-12);
        assert!(spectral_statistic(&s, 2, 1, h).abs() < 1e-12);
        assert_eq!(spectral_statistic(&s, 1, 0, h), 0.0);
    }

    #[test]
    fn batched_matches_direct_sum() {
        let panel = Panel::new(vec![random_walk(1, 3000, "A"), random_walk(2, 1700, "B")]).unwrap();
        let grid = BlockGrid {
            h: 1.0 / 23.0,
            num_blocks: 23,
            j_max: 70,
            k_half: 2,
        };
        let spectra = block_spectra(&panel, &grid, 70);
        for (p, s) in panel.series().iter().enumerate() {
            for k in [0, 5, 22] {
                for j in [1, 2, 33, 64, 70] {
                    let direct = spectral_statistic(s, j, k, grid.h);
                    let batched = spectra[k].values[(j - 1, p)];
                    let scale: f64 = s.returns().iter().map(|r| r.abs()).sum::<f64>() * (2.0 / grid.h).sqrt();
                    assert!((direct - batched).abs() <= 1e-12 * scale, "p={p} k={k} j={j}");
                }
            }
        }
        let total: usize = spectra.iter().map(|st| st.counts[1]).sum();
        assert_eq!(total, panel.series()[1].len() - 1);
    }

    #[test]
    fn identical_assets_give_identical_columns() {
        let a = random_walk(5, 500, "A");
        let mut b = a.clone();
        b.asset_id = "B".into();
        let panel = Panel::new(vec![a, b]).unwrap();
        let grid = BlockGrid {
            h: 0.1,
            num_blocks: 10,
            j_max: 5,
            k_half: 1,
        };
        for st in block_spectra(&panel, &grid, 5) {
            assert_eq!(st.values.column(0), st.values.column(1));
        }
    }

    #[test]
    fn changes_outside_block_do_not_matter() {
        let a = random_walk(9, 800, "A");
        let h = 0.125;
        let k = 3;
        let t = a.times().to_vec();
        let mut y = a.log_prices().to_vec();
        // perturb every observation that only touches returns with midpoints outside block 3
        for i in 0..t.len() {
            let left = i > 0 && block_index(0.5 * (t[i - 1] + t[i]), h) == k as i64;
            let right = i + 1 < t.len() && block_index(0.5 * (t[i] + t[i + 1]), h) == k as i64;
            if !left && !right {
                y[i] += 10.0;
            }
        }
        let b = ObservationSeries::new("A", t, y).unwrap();
        for j in 1..6 {
            assert_eq!(spectral_statistic(&a, j, k, h), spectral_statistic(&b, j, k, h));
        }
    }

    /// `∫ A^p A^q` on a fine grid of evaluation points.
    fn overlap_by_quadrature(panel: &Panel, grid: &BlockGrid, j: usize, k: usize, p: usize, q: usize) -> f64 {
        let step = |s: &ObservationSeries, t: f64| -> f64 {
            let times = s.times();
            let i = times.partition_point(|&x| x <= t);
            if i == 0 || i >= times.len() {
                return 0.0;
            }
            let mid = 0.5 * (times[i - 1] + times[i]);
            if block_index(mid, grid.h) != k as i64 {
                return 0.0;
            }
            (2.0 / grid.h).sqrt() * (j as f64 * PI * (mid - k as f64 * grid.h) / grid.h).sin()
        };
        let m = 200_000;
        let (lo, hi) = ((k as f64 - 1.0) * grid.h, (k as f64 + 2.0) * grid.h);
        let dt = (hi - lo) / m as f64;
        (0..m)
            .map(|i| {
                let t = lo + (i as f64 + 0.5) * dt;
                step(&panel.series()[p], t) * step(&panel.series()[q], t) * dt
            })
            .sum()
    }

    #[test]
    fn overlap_matches_quadrature() {
        let panel = Panel::new(vec![random_walk(21, 400, "A"), random_walk(22, 250, "B")]).unwrap();
        let grid = BlockGrid {
            h: 0.1,
            num_blocks: 10,
            j_max: 12,
            k_half: 1,
        };
        let mut spectra = block_spectra(&panel, &grid, 12);
        attach_signal_overlap(&mut spectra, &panel, &grid, 12);
        for k in [0, 4, 9] {
            let o = spectra[k].overlap.as_ref().unwrap();
            for j in [1, 5, 12] {
                for (p, q) in [(0, 0), (0, 1), (1, 1)] {
                    let quad = overlap_by_quadrature(&panel, &grid, j, k, p, q);
                    assert!((o[j - 1][(p, q)] - quad).abs() < 2e-3, "k={k} j={j} ({p},{q}): {} vs {quad}", o[j - 1][(p, q)]);
                    assert_eq!(o[j - 1][(p, q)], o[j - 1][(q, p)]);
                }
            }
        }
    }

    #[test]
    fn dense_synchronous_overlap_is_one() {
        let n = 100_001;
        let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let a = ObservationSeries::new("A", times.clone(), vec![0.0; n]).unwrap();
        let b = ObservationSeries::new("B", times, vec![0.0; n]).unwrap();
        let panel = Panel::new(vec![a, b]).unwrap();
        let grid = BlockGrid {
            h: 0.05,
            num_blocks: 20,
            j_max: 10,
            k_half: 1,
        };
        let mut spectra = block_spectra(&panel, &grid, 10);
        attach_signal_overlap(&mut spectra, &panel, &grid, 10);
        for st in &spectra[1..19] {
            for m in st.overlap.as_ref().unwrap() {
                assert!((m - DMatrix::from_element(2, 2, 1.0)).amax() < 1e-3);
            }
        }
    }

    #[test]
    fn asynchronous_cross_overlap_shrinks_with_frequency() {
        let panel = Panel::new(vec![random_walk(31, 20_000, "A"), random_walk(32, 20_000, "B")]).unwrap();
        let grid = BlockGrid {
            h: 0.02,
            num_blocks: 50,
            j_max: 60,
            k_half: 1,
        };
        let mut spectra = block_spectra(&panel, &grid, 60);
        attach_signal_overlap(&mut spectra, &panel, &grid, 60);
        let mean = |j: usize, p: usize, q: usize| {
            spectra[1..49].iter().map(|st| st.overlap.as_ref().unwrap()[j - 1][(p, q)]).sum::<f64>() / 48.0
        };
        // E[(t − m)²] = 1/(2λ²) per asset: K ≈ 1 − (jπ/h)²/(2λ²)
        let x = 60.0 * PI / (grid.h * 20_000.0);
        assert!((mean(60, 0, 1) - (1.0 - x * x / 2.0)).abs() < 0.03, "{}", mean(60, 0, 1));
        assert!((mean(60, 0, 0) - 1.0).abs() < 0.02);
        assert!((mean(1, 0, 1) - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn statistics_are_linear_in_prices(seed in 0u64..1000, c in -3.0f64..3.0) {
            let a = random_walk(seed, 200, "A");
            let other = random_walk(seed + 10_000, 200, "B");
            // second path on the same times
            let yb: Vec<f64> = other.log_prices().iter().take(a.len()).copied()
                .chain(std::iter::repeat(0.0)).take(a.len()).collect();
            let b = ObservationSeries::new("A", a.times().to_vec(), yb.clone()).unwrap();
            let sum: Vec<f64> = a.log_prices().iter().zip(&yb).map(|(x, z)| x + c * z).collect();
            let ab = ObservationSeries::new("A", a.times().to_vec(), sum).unwrap();
            let mass: f64 = a.returns().iter().chain(&b.returns()).map(|r| r.abs()).sum::<f64>()
                * (1.0 + c.abs()) * 8f64.sqrt();
            for j in 1..5 {
                for k in 0..4 {
                    let lhs = spectral_statistic(&ab, j, k, 0.25);
                    let rhs = spectral_statistic(&a, j, k, 0.25) + c * spectral_statistic(&b, j, k, 0.25);
                    prop_assert!((lhs - rhs).abs() <= 1e-12 * mass);
                }
            }
        }
    }
}
