//! Deterministic batteries of trial fields: radial bumps with randomized
//! smooth perturbations for solver starts, and sign-varying smooth fields for
//! property checks and embedding-constant estimation.
//!
//! Every generator draws from a caller-seeded ChaCha stream, and battery
//! members derive their own stream from (seed, index), so results do not
//! depend on evaluation order.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{GridSpec, ScalarField};

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for battery member `index` derived from the run seed.
pub fn rng_for_member(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Low-frequency trigonometric mix on the bounding box, values O(1).
fn trig_mix(grid: &GridSpec, rng: &mut ChaCha8Rng) -> impl Fn(&[f64]) -> f64 {
    let dim = grid.dim();
    let lo = grid.lo();
    let span = grid.hi() - grid.lo();
    let mut modes = Vec::new();
    for _ in 0..4 {
        let amp: f64 = rng.random_range(-1.0..1.0);
        let mut freq = [0.0f64; 3];
        let mut phase = [0.0f64; 3];
        for d in 0..dim {
            freq[d] = rng.random_range(1..4) as f64;
            phase[d] = rng.random_range(0.0..std::f64::consts::TAU);
        }
        modes.push((amp, freq, phase));
    }
    move |x: &[f64]| {
        let mut v = 0.0;
        for (amp, freq, phase) in &modes {
            let mut m = *amp;
            for d in 0..dim {
                let xi = (x[d] - lo) / span;
                m *= (std::f64::consts::PI * freq[d] * xi + phase[d]).cos();
            }
            v += m;
        }
        v
    }
}

/// Sign-varying smooth Dirichlet-zero field: trig mix times a boundary bump.
pub fn random_smooth_dirichlet(grid: &Arc<GridSpec>, rng: &mut ChaCha8Rng) -> ScalarField {
    let mix = trig_mix(grid, rng);
    let lo = grid.lo();
    let hi = grid.hi();
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    ScalarField::from_fn_dirichlet(grid, |x| {
        let mut env = 1.0;
        for &c in x {
            let t = (c - mid) / half;
            env *= (1.0 - t * t).max(0.0);
        }
        env * mix(x)
    })
}

/// Non-negative bump direction: parabolic cap of radius `radius` at `center`,
/// optionally modulated by a random smooth factor kept positive.
fn bump_field(
    grid: &Arc<GridSpec>,
    center: &[f64],
    radius: f64,
    modulation: Option<&dyn Fn(&[f64]) -> f64>,
) -> ScalarField {
    ScalarField::from_fn_dirichlet(grid, |x| {
        let mut d2 = 0.0;
        for (d, &c) in x.iter().enumerate() {
            d2 += (c - center[d]) * (c - center[d]);
        }
        let cap = (1.0 - d2 / (radius * radius)).max(0.0);
        let m = modulation.map_or(1.0, |f| (1.0 + 0.4 * f(x)).max(0.0));
        cap * m
    })
}

/// Battery of non-negative starting directions: two deterministic radial
/// bumps, then randomized offset/width/modulation variants.
pub fn bump_battery(grid: &Arc<GridSpec>, count: usize, seed: u64) -> Vec<ScalarField> {
    let dim = grid.dim();
    let mid = 0.5 * (grid.lo() + grid.hi());
    let half = 0.5 * (grid.hi() - grid.lo());
    let center = vec![mid; dim];
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let field = match k {
            0 => bump_field(grid, &center, half, None),
            1 => bump_field(grid, &center, 0.5 * half, None),
            _ => {
                let mut rng = rng_for_member(seed, k);
                let mut c = vec![0.0; dim];
                for cd in c.iter_mut() {
                    *cd = mid + rng.random_range(-0.2..0.2) * half;
                }
                let radius = half * rng.random_range(0.35..1.0);
                let mix = trig_mix(grid, &mut rng);
                bump_field(grid, &c, radius, Some(&mix))
            }
        };
        if !field.is_zero_interior() {
            out.push(field);
        } else {
            // off-domain draw; replace with the safe centered bump
            out.push(bump_field(grid, &center, half, None));
        }
    }
    out
}

/// 200-direction style battery for fibering studies: non-negative bumps of
/// many centers and widths (same generator family as `bump_battery`).
pub fn direction_battery(grid: &Arc<GridSpec>, count: usize, seed: u64) -> Vec<ScalarField> {
    bump_battery(grid, count, seed)
}

/// Battery for embedding-constant estimation: alternates sign-varying smooth
/// fields, off-center modulated bumps and tight centered bumps, so the
/// estimator covers every field family the Hardy checks and the solver use.
pub fn estimator_battery(grid: &Arc<GridSpec>, count: usize, seed: u64) -> Vec<ScalarField> {
    let dim = grid.dim();
    let mid = 0.5 * (grid.lo() + grid.hi());
    let half = 0.5 * (grid.hi() - grid.lo());
    let center = vec![mid; dim];
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = rng_for_member(seed, k);
        let field = match k % 3 {
            0 => random_smooth_dirichlet(grid, &mut rng),
            1 => {
                let mut c = vec![0.0; dim];
                for cd in c.iter_mut() {
                    *cd = mid + rng.random_range(-0.25..0.25) * half;
                }
                let radius = half * rng.random_range(0.3..1.0);
                let mix = trig_mix(grid, &mut rng);
                bump_field(grid, &c, radius, Some(&mix))
            }
            _ => {
                let radius = half * rng.random_range(0.1..1.0);
                bump_field(grid, &center, radius.max(2.5 * grid.spacing()), None)
            }
        };
        if !field.is_zero_interior() {
            out.push(field);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::grid::build_grid;

    #[test]
    fn batteries_are_deterministic_and_nonnegative() {
        let g = build_grid(2, 15, -1.0, 1.0, &parse("chi_ball(0,0,1)").unwrap()).unwrap();
        let a = bump_battery(&g, 5, 42);
        let b = bump_battery(&g, 5, 42);
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.values(), fb.values());
            assert!(fa.values().iter().all(|&v| v >= 0.0));
            assert!(!fa.is_zero_interior());
        }
        let c = bump_battery(&g, 5, 43);
        assert!(a[4].values() != c[4].values());
    }

    #[test]
    fn random_smooth_is_dirichlet_zero() {
        let g = build_grid(3, 9, -1.0, 1.0, &parse("chi_ball(0,0,0,1)").unwrap()).unwrap();
        let mut rng = rng_for(7);
        let f = random_smooth_dirichlet(&g, &mut rng);
        for idx in 0..g.node_count() {
            if !g.is_interior(idx) {
                assert_eq!(f.values()[idx], 0.0);
            }
        }
    }
}
