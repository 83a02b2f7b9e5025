//! Fibering map Φ_u(t) = J_λ(tu): scanning, projection onto the Nehari set
//! (Φ'_u(t) = 0) and classification of critical points into the branches
//! M+ / M0 / M− by the sign of the second fibering form.
//!
//! Projection scans a geometric t-grid for sign changes of
//! N(t) = ⟨J'_λ(tu), tu⟩ = t·Φ'_u(t) and refines each bracket with
//! bisection plus a safeguarded secant step. All roots found are returned;
//! in the expected regime there are at most two, and the branch selector
//! keeps the smallest M+ root and the largest M− root.

use thiserror::Error;

use crate::energy::{RayProfile, RegularizationPolicy};
use crate::grid::ScalarField;
use crate::spaces::{sobolev_norm, ExponentSet};

/// Relative tolerance of the root residual |⟨J'(tu),tu⟩| against the term scale.
pub const TOL_ROOT: f64 = 1e-9;
/// Dead band for M0 classification, relative to the ϱ-part of the second form.
pub const TOL_CLASS: f64 = 1e-7;
/// Points of the default geometric scan grid.
pub const SCAN_POINTS: usize = 256;
/// Default bracket is [1e-6, 1e6] scaled by 1/||u||_{1,T,0}.
pub const T_BRACKET_DECADES: f64 = 6.0;

#[derive(Debug, Clone, Error)]
pub enum FiberError {
    #[error("direction is zero on the interior")]
    ZeroDirection,
    #[error("Φ' has no sign change on the scanned bracket [{t_lo}, {t_hi}]")]
    NoRoot { t_lo: f64, t_hi: f64, scan: Vec<ScanRow> },
    #[error("field is not on the Nehari set: residual {residual} exceeds {allowed}")]
    NotOnManifold { residual: f64, allowed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Mplus,
    Mzero,
    Mminus,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Mplus => "M+",
            Branch::Mzero => "M0",
            Branch::Mminus => "M-",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanRow {
    pub t: f64,
    pub phi: f64,
    pub phi1: f64,
}

/// A critical point of the fibering map: t, Φ(t), Φ'(t), Φ''(t) and branch.
#[derive(Debug, Clone, Copy)]
pub struct FiberRoot {
    pub t: f64,
    pub phi: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone)]
pub struct FiberingResult {
    pub roots: Vec<FiberRoot>,
    pub scan: Vec<ScanRow>,
    pub direction_norm: f64,
}

impl FiberingResult {
    /// Branch representative: smallest-t root on M+, largest-t root on M−.
    pub fn branch_root(&self, branch: Branch) -> Option<&FiberRoot> {
        match branch {
            Branch::Mplus | Branch::Mzero => {
                self.roots.iter().find(|r| r.branch == branch)
            }
            Branch::Mminus => self.roots.iter().rev().find(|r| r.branch == branch),
        }
    }
}

fn geometric_grid(t_lo: f64, t_hi: f64, points: usize) -> Vec<f64> {
    let l0 = t_lo.ln();
    let l1 = t_hi.ln();
    (0..points)
        .map(|k| (l0 + (l1 - l0) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Φ and analytic Φ' sampled on a caller-supplied positive t-grid, with the
/// Φ(0) = 0 reference prepended as the first row.
pub fn fibering_scan(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    t_grid: &[f64],
    regpol: &RegularizationPolicy,
) -> Result<Vec<ScanRow>, FiberError> {
    if u.is_zero_interior() {
        return Err(FiberError::ZeroDirection);
    }
    let prof = RayProfile::new(u, es, lambda, regpol);
    let mut rows = Vec::with_capacity(t_grid.len() + 1);
    rows.push(ScanRow { t: 0.0, phi: 0.0, phi1: f64::NAN });
    for &t in t_grid {
        let (phi, neh, _) = prof.triple_at(t);
        rows.push(ScanRow { t, phi, phi1: neh / t });
    }
    Ok(rows)
}

struct RootFinder<'a> {
    prof: &'a RayProfile,
}

impl<'a> RootFinder<'a> {
    fn nehari(&self, t: f64) -> f64 {
        self.prof.triple_at(t).1
    }

    /// Refine a sign-change bracket of N(t) by bisection with a safeguarded
    /// secant step; stops on the relative residual or bracket exhaustion.
    fn refine(&self, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> f64 {
        debug_assert!(fa * fb <= 0.0);
        let mut t_best = if fa.abs() < fb.abs() { a } else { b };
        for iter in 0..160 {
            // secant candidate, admitted only well inside the bracket
            let mut t = if (fb - fa).abs() > 0.0 {
                (a * fb - b * fa) / (fb - fa)
            } else {
                f64::NAN
            };
            let lo_guard = a + 0.1 * (b - a);
            let hi_guard = b - 0.1 * (b - a);
            if !(t.is_finite() && t > lo_guard && t < hi_guard) || iter % 2 == 1 {
                t = (a * b).sqrt(); // geometric midpoint, scale-free
            }
            let ft = self.nehari(t);
            let scale = self.prof.nehari_parts_at(t).scale();
            t_best = t;
            if ft.abs() <= TOL_ROOT * scale || (b - a) <= 1e-15 * t {
                return t;
            }
            if (ft >= 0.0) == (fa >= 0.0) {
                a = t;
                fa = ft;
            } else {
                b = t;
                fb = ft;
            }
        }
        t_best
    }
}

fn classify_at(prof: &RayProfile, t: f64) -> (FiberRoot, f64) {
    let (phi, neh, sec) = prof.triple_at(t);
    let parts2 = prof.second_parts_at(t);
    // at a root Φ''(t) = (S - N)/t^2; keeping the N correction makes the
    // classification exact even with a residual left by refinement
    let class_scalar = sec - neh;
    let tol = TOL_CLASS * (parts2.rho + parts2.hardy);
    let branch = if class_scalar > tol {
        Branch::Mplus
    } else if class_scalar < -tol {
        Branch::Mminus
    } else {
        Branch::Mzero
    };
    (
        FiberRoot { t, phi, phi1: neh / t, phi2: class_scalar / (t * t), branch },
        class_scalar,
    )
}

/// Project a non-negative direction onto the Nehari set: find all positive
/// critical points of Φ_u on the default bracket and classify them.
pub fn project_to_nehari(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    regpol: &RegularizationPolicy,
) -> Result<FiberingResult, FiberError> {
    let norm = sobolev_norm(u, es);
    if !(norm > 0.0) {
        return Err(FiberError::ZeroDirection);
    }
    let t_lo = 10f64.powf(-T_BRACKET_DECADES) / norm;
    let t_hi = 10f64.powf(T_BRACKET_DECADES) / norm;
    project_on_window(u, es, lambda, regpol, t_lo, t_hi, SCAN_POINTS, norm)
}

/// Projection over an explicit window (used by the solver to warm-start near
/// a previous root; falls back to `project_to_nehari` when it misses).
pub fn project_on_window(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    regpol: &RegularizationPolicy,
    t_lo: f64,
    t_hi: f64,
    points: usize,
    direction_norm: f64,
) -> Result<FiberingResult, FiberError> {
    let prof = RayProfile::new(u, es, lambda, regpol);
    let grid_t = geometric_grid(t_lo, t_hi, points);
    let finder = RootFinder { prof: &prof };
    let mut scan = Vec::with_capacity(points);
    let mut values = Vec::with_capacity(points);
    for &t in &grid_t {
        let (phi, neh, _) = prof.triple_at(t);
        scan.push(ScanRow { t, phi, phi1: neh / t });
        values.push(neh);
    }
    let mut roots: Vec<FiberRoot> = Vec::new();
    for k in 0..points - 1 {
        let (fa, fb) = (values[k], values[k + 1]);
        if fa == 0.0 {
            let (root, _) = classify_at(&prof, grid_t[k]);
            push_root(&mut roots, root);
            continue;
        }
        if fa * fb < 0.0 {
            let t = finder.refine(grid_t[k], fa, grid_t[k + 1], fb);
            let (root, _) = classify_at(&prof, t);
            push_root(&mut roots, root);
        }
    }
    if roots.is_empty() {
        return Err(FiberError::NoRoot { t_lo, t_hi, scan });
    }
    roots.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(FiberingResult { roots, scan, direction_norm })
}

fn push_root(roots: &mut Vec<FiberRoot>, root: FiberRoot) {
    if roots.iter().all(|r| (r.t - root.t).abs() > 1e-9 * root.t) {
        roots.push(root);
    }
}

/// Classify a field already on the Nehari set by the sign of the second
/// fibering form, with a dead band for M0.
pub fn classify(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    regpol: &RegularizationPolicy,
) -> Result<Branch, FiberError> {
    if u.is_zero_interior() {
        return Err(FiberError::ZeroDirection);
    }
    let prof = RayProfile::new(u, es, lambda, regpol);
    let parts = prof.nehari_parts_at(1.0);
    let residual = parts.value().abs();
    let allowed = TOL_ROOT * parts.scale();
    if residual > allowed {
        return Err(FiberError::NotOnManifold { residual, allowed });
    }
    let (root, _) = classify_at(&prof, 1.0);
    Ok(root.branch)
}

// ------------------------- analytic lambda thresholds -------------------------

/// Named smallness bounds on λ extracted from the exponent bounds, plus the
/// minimum `lambda_star_analytic`. Bounds that need s− > r+ are absent when
/// the extrema ordering fails.
#[derive(Debug, Clone, Copy)]
pub struct LambdaBounds {
    /// (1−β+)/r+: below this, Φ_u(t) > 0 for small t (fibering geometry).
    pub lambda_small_t: f64,
    /// (s−−r+)(1−β+)/(r+(s−−(1−β+))): below this the M− level is positive.
    pub lambda_positive_level: Option<f64>,
    /// Norm threshold t1 = ((p−−(1−β−))/(s+−(1−β−)))^{1/(s+−p−)} of the
    /// M0-emptiness argument.
    pub m0_norm_threshold: f64,
    /// λ at which the M0 upper norm bound reaches min(1, t1): for smaller λ
    /// the two M0 norm estimates conflict and M0 must be empty.
    pub lambda_m0_empty: Option<f64>,
    /// min over the named bounds (the artifact's convention for λ*).
    pub lambda_star_analytic: f64,
}

impl LambdaBounds {
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("lambda_small_t".to_string(), format!("{:?}", self.lambda_small_t)),
            ("m0_norm_threshold".to_string(), format!("{:?}", self.m0_norm_threshold)),
        ];
        match self.lambda_positive_level {
            Some(v) => kv.push(("lambda_positive_level".into(), format!("{v:?}"))),
            None => kv.push(("lambda_positive_level".into(), "undefined".into())),
        }
        match self.lambda_m0_empty {
            Some(v) => kv.push(("lambda_m0_empty".into(), format!("{v:?}"))),
            None => kv.push(("lambda_m0_empty".into(), "undefined".into())),
        }
        kv.push(("lambda_star_analytic".into(), format!("{:?}", self.lambda_star_analytic)));
        kv
    }
}

/// Analytic λ thresholds from the exponent bounds.
pub fn lambda_bounds(es: &ExponentSet) -> LambdaBounds {
    let b = &es.bounds;
    let sig_plus = 1.0 - b.beta_plus; // 1 - β+
    let sig_minus = 1.0 - b.beta_minus; // 1 - β-
    let lambda_small_t = sig_plus / b.r_plus;

    let ordering = b.s_minus > b.r_plus;
    let lambda_positive_level = if ordering && b.s_minus > sig_plus {
        Some((b.s_minus - b.r_plus) * sig_plus / (b.r_plus * (b.s_minus - sig_plus)))
    } else {
        None
    };

    let t1 = if b.s_plus > b.p_minus && b.p_minus > sig_minus {
        ((b.p_minus - sig_minus) / (b.s_plus - sig_minus)).powf(1.0 / (b.s_plus - b.p_minus))
    } else {
        f64::NAN
    };
    let lambda_m0_empty = if ordering && b.p_minus > sig_minus && t1.is_finite() {
        let cap = t1.min(1.0);
        Some((b.s_minus - b.r_plus) / (b.s_minus - sig_plus) * cap.powf(b.p_minus - sig_minus))
    } else {
        None
    };

    let mut star = lambda_small_t;
    if let Some(v) = lambda_positive_level {
        star = star.min(v);
    }
    if let Some(v) = lambda_m0_empty {
        star = star.min(v);
    }
    LambdaBounds {
        lambda_small_t,
        lambda_positive_level,
        m0_norm_threshold: t1,
        lambda_m0_empty,
        lambda_star_analytic: star,
    }
}
