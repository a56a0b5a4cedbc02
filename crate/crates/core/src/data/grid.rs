use crate::data::{BlockGrid, EstimatorConfig, Panel, Side};
use crate::error::{Error, Result};

/// Smallest sample size for which the geometry is non-degenerate.
pub const MIN_SAMPLE_SIZE: usize = 16;

/// Block geometry for a panel: `n` is the least liquid asset's count.
pub fn make_grid(config: &EstimatorConfig, panel: &Panel) -> Result<BlockGrid> {
    let n = panel.n();
    make_grid_for(config, n, n)
}

/// Block geometry from the rate sample size `n` and the smallest observation
/// count `n_min` (which caps the spectral cutoff). The two coincide for a
/// full-day panel.
pub fn make_grid_for(config: &EstimatorConfig, n: usize, n_min: usize) -> Result<BlockGrid> {
    config.validate()?;
    if n < MIN_SAMPLE_SIZE {
        return Err(Error::Config(format!(
            "sample size n = {n} is below the minimum of {MIN_SAMPLE_SIZE}"
        )));
    }
    let nf = n as f64;
    let log_n = nf.ln();
    let h = (config.theta_h * log_n / nf.sqrt()).min(1.0);
    let num_blocks = (1.0 / h).ceil().max(1.0) as usize;

    let j_rate = (config.theta_j * log_n).floor();
    let j_cap = (n_min as f64 * h).floor();
    let j_max = j_rate.min(j_cap).max(1.0) as usize;

    let k_half = (config.theta_k * nf.powf(0.25 - config.delta)).ceil() as usize;

    Ok(BlockGrid {
        h,
        num_blocks,
        j_max,
        k_half,
    })
}

/// Inclusive block range `(L, U)` smoothed over for an estimate at time `s`.
pub fn window_bounds(grid: &BlockGrid, s: f64, side: Side) -> (usize, usize) {
    let b = grid.block_of(s.clamp(0.0, 1.0));
    let last = grid.num_blocks - 1;
    match side {
        Side::TwoSided => (
            b.saturating_sub(grid.k_half),
            (b + grid.k_half).min(last),
        ),
        Side::OneSided => (b.saturating_sub(2 * grid.k_half), b.min(last)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(theta_h: f64, theta_j: f64, theta_k: f64) -> EstimatorConfig {
        EstimatorConfig::default().with_thetas(theta_h, theta_j, theta_k)
    }

    fn grid(h: f64, num_blocks: usize, k_half: usize) -> BlockGrid {
        BlockGrid {
            h,
            num_blocks,
            j_max: 1,
            k_half,
        }
    }

    #[test]
    fn block_length_and_count() {
        let g = make_grid_for(&cfg(0.15, 6.0, 2.0), 10_000, 10_000).unwrap();
        // 0.15 · ln(10⁴) / 100
        assert!((g.h - 0.013_815_51).abs() < 1e-8, "h = {}", g.h);
        assert_eq!(g.num_blocks, 73);
    }

    #[test]
    fn spectral_cutoff_rate_and_cap() {
        let g = make_grid_for(&cfg(0.15, 6.0, 2.0), 10_000, 10_000).unwrap();
        // ⌊6 · 9.2103⌋ = 55 is below the cap ⌊10⁴ · 0.0138⌋ = 138
        assert_eq!(g.j_max, 55);
        let capped = make_grid_for(&cfg(0.15, 6.0, 2.0), 10_000, 2_000).unwrap();
        // ⌊2000 · 0.013815⌋ = 27
        assert_eq!(capped.j_max, 27);
    }

    #[test]
    fn window_half_width() {
        let g = make_grid_for(&cfg(0.15, 6.0, 2.0), 10_000, 10_000).unwrap();
        // ⌈2 · 10⁴^0.24⌉ = ⌈18.19⌉
        assert_eq!(g.k_half, 19);
    }

    #[test]
    fn small_samples_are_rejected() {
        assert!(matches!(
            make_grid_for(&EstimatorConfig::default(), 15, 15),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_bounds(&grid(0.1, 10, 5), 0.0, Side::TwoSided), (0, 5));
        let g80 = grid(1.0 / 80.0, 80, 6);
        assert_eq!(window_bounds(&g80, 0.5, Side::TwoSided), (34, 46));
        assert_eq!(window_bounds(&g80, 1.0, Side::OneSided), (67, 79));
        assert_eq!(window_bounds(&g80, 1.0, Side::TwoSided), (73, 79));
    }

    #[test]
    fn window_contains_block_on_fine_grid() {
        for (h, nb, k) in [(0.013_8, 73, 19), (1.0 / 80.0, 80, 6), (0.3, 4, 0), (1.0, 1, 3)] {
            let g = grid(h, nb, k);
            for i in 0..=1000 {
                let s = i as f64 / 1000.0;
                for side in [Side::TwoSided, Side::OneSided] {
                    let (l, u) = window_bounds(&g, s, side);
                    let b = g.block_of(s);
                    assert!(l <= b && b <= u, "s={s} side={side:?}");
                    assert!(u < nb);
                    assert!(u - l + 1 <= 2 * k + 1);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn larger_theta_h_never_adds_blocks(
            n in 16usize..200_000,
            a in 0.01f64..1.0,
            b in 0.01f64..1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let g_lo = make_grid_for(&cfg(lo, 6.0, 2.0), n, n).unwrap();
            let g_hi = make_grid_for(&cfg(hi, 6.0, 2.0), n, n).unwrap();
            prop_assert!(g_hi.num_blocks <= g_lo.num_blocks);
            prop_assert!(g_lo.h * g_lo.num_blocks as f64 >= 1.0 - 1e-12);
        }

        #[test]
        fn larger_theta_k_never_shrinks_window(
            n in 16usize..200_000,
            a in 0.01f64..10.0,
            b in 0.01f64..10.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let g_lo = make_grid_for(&cfg(0.15, 6.0, lo), n, n).unwrap();
            let g_hi = make_grid_for(&cfg(0.15, 6.0, hi), n, n).unwrap();
            prop_assert!(g_hi.k_half >= g_lo.k_half);
            prop_assert!(g_lo.j_max >= 1);
        }
    }
}
