//! Variable-exponent modulars, Luxemburg norms, the multi-phase modular
//! rho_T, and validation of the structural hypotheses (H1), (H2), (A_beta),
//! (A_alpha), (A_gamma).
//!
//! The modular of a field u with exponent field h is rho(u) = ∫ |u|^{h(x)} dx
//! and the Luxemburg norm is the unique zeta > 0 with rho(u/zeta) = 1 (zero
//! field maps to 0). The multi-phase modular uses
//! T(x,t) = t^{p(x)} + mu1(x) t^{q(x)} + mu2(x) t^{r(x)}.
//!
//! Exponent bounds (p^-, p^+, ...) are taken over interior grid nodes — these
//! are the values every downstream formula uses; they discretize the
//! continuum min/max over the closed domain.

use std::sync::Arc;

use thiserror::Error;

use crate::expr::{Expr, ParseError};
use crate::grid::{gradient, GridSpec, ScalarField};

/// Relative tolerance of the Luxemburg-norm bisection.
pub const TOL_LUX: f64 = 1e-10;

#[derive(Debug, Clone, Error)]
pub enum SpacesError {
    #[error("field `{0}` lives on a different grid")]
    DimensionMismatch(&'static str),
    #[error("expression for `{key}` failed to parse: {source}")]
    BadExpr {
        key: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("expression for `{key}` failed to evaluate: {source}")]
    BadEval {
        key: &'static str,
        #[source]
        source: crate::expr::EvalError,
    },
}

/// Scalar bounds extracted from the exponent fields over interior nodes.
#[derive(Debug, Clone, Copy)]
pub struct ExponentBounds {
    pub p_minus: f64,
    pub p_plus: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub s_minus: f64,
    pub s_plus: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
    pub p_star_min: f64,
    pub mu1_inf: f64,
    pub mu2_inf: f64,
}

/// The full collection of exponent and weight fields of the problem, with
/// derived quantities: p*(x) = N p/(N−p) (infinite where p >= N, which (H1)
/// rejects), alpha0 = alpha/(alpha−1), gamma0 = gamma/(gamma−1).
#[derive(Debug, Clone)]
pub struct ExponentSet {
    grid: Arc<GridSpec>,
    pub p: ScalarField,
    pub q: ScalarField,
    pub r: ScalarField,
    pub s: ScalarField,
    pub beta: ScalarField,
    pub alpha: ScalarField,
    pub gamma: ScalarField,
    pub mu1: ScalarField,
    pub mu2: ScalarField,
    pub m1: ScalarField,
    pub m2: ScalarField,
    pub p_star: ScalarField,
    pub alpha0: ScalarField,
    pub gamma0: ScalarField,
    pub bounds: ExponentBounds,
}

pub struct ExponentFields {
    pub p: ScalarField,
    pub q: ScalarField,
    pub r: ScalarField,
    pub s: ScalarField,
    pub beta: ScalarField,
    pub alpha: ScalarField,
    pub gamma: ScalarField,
    pub mu1: ScalarField,
    pub mu2: ScalarField,
    pub m1: ScalarField,
    pub m2: ScalarField,
}

impl ExponentSet {
    pub fn new(grid: Arc<GridSpec>, f: ExponentFields) -> Result<Self, SpacesError> {
        for (name, field) in [
            ("p", &f.p),
            ("q", &f.q),
            ("r", &f.r),
            ("s", &f.s),
            ("beta", &f.beta),
            ("alpha", &f.alpha),
            ("gamma", &f.gamma),
            ("mu1", &f.mu1),
            ("mu2", &f.mu2),
            ("m1", &f.m1),
            ("m2", &f.m2),
        ] {
            if !field.grid().same_layout(&grid) {
                return Err(SpacesError::DimensionMismatch(name));
            }
        }
        let n_dim = grid.dim() as f64;
        let mut p_star = ScalarField::zeros(&grid);
        for idx in 0..grid.node_count() {
            let pv = f.p.values()[idx];
            p_star.values_mut()[idx] =
                if pv < n_dim { n_dim * pv / (n_dim - pv) } else { f64::INFINITY };
        }
        let conj = |field: &ScalarField| {
            let mut out = ScalarField::zeros(&grid);
            for idx in 0..grid.node_count() {
                let a = field.values()[idx];
                out.values_mut()[idx] = if a > 1.0 { a / (a - 1.0) } else { f64::INFINITY };
            }
            out
        };
        let alpha0 = conj(&f.alpha);
        let gamma0 = conj(&f.gamma);

        let minmax = |field: &ScalarField| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &idx in grid.interior_nodes() {
                let v = field.values()[idx];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let (p_minus, p_plus) = minmax(&f.p);
        let (q_minus, q_plus) = minmax(&f.q);
        let (r_minus, r_plus) = minmax(&f.r);
        let (s_minus, s_plus) = minmax(&f.s);
        let (beta_minus, beta_plus) = minmax(&f.beta);
        let (p_star_min, _) = minmax(&p_star);
        let (_, mu1_inf) = minmax(&f.mu1);
        let (_, mu2_inf) = minmax(&f.mu2);

        Ok(ExponentSet {
            grid,
            p: f.p,
            q: f.q,
            r: f.r,
            s: f.s,
            beta: f.beta,
            alpha: f.alpha,
            gamma: f.gamma,
            mu1: f.mu1,
            mu2: f.mu2,
            m1: f.m1,
            m2: f.m2,
            p_star,
            alpha0,
            gamma0,
            bounds: ExponentBounds {
                p_minus,
                p_plus,
                q_minus,
                q_plus,
                r_minus,
                r_plus,
                s_minus,
                s_plus,
                beta_minus,
                beta_plus,
                p_star_min,
                mu1_inf,
                mu2_inf,
            },
        })
    }

    /// Sample every field from expression strings.
    pub fn from_exprs(grid: Arc<GridSpec>, exprs: &ExponentExprs) -> Result<Self, SpacesError> {
        let sample = |key: &'static str, src: &str| -> Result<ScalarField, SpacesError> {
            let e: Expr =
                crate::expr::parse(src).map_err(|source| SpacesError::BadExpr { key, source })?;
            ScalarField::sample_expr(&grid, &e).map_err(|source| SpacesError::BadEval { key, source })
        };
        let fields = ExponentFields {
            p: sample("p", &exprs.p)?,
            q: sample("q", &exprs.q)?,
            r: sample("r", &exprs.r)?,
            s: sample("s", &exprs.s)?,
            beta: sample("beta", &exprs.beta)?,
            alpha: sample("alpha", &exprs.alpha)?,
            gamma: sample("gamma", &exprs.gamma)?,
            mu1: sample("mu1", &exprs.mu1)?,
            mu2: sample("mu2", &exprs.mu2)?,
            m1: sample("m1", &exprs.m1)?,
            m2: sample("m2", &exprs.m2)?,
        };
        Self::new(grid, fields)
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }
}

/// Expression strings for every exponent and weight field.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentExprs {
    pub p: String,
    pub q: String,
    pub r: String,
    pub s: String,
    pub beta: String,
    pub alpha: String,
    pub gamma: String,
    pub mu1: String,
    pub mu2: String,
    pub m1: String,
    pub m2: String,
}

// ------------------------- hypothesis validation -------------------------

/// Outcome of a single hypothesis: the smallest margin over interior nodes
/// (negative margin = violated) and where the worst violation sits.
#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    pub pass: bool,
    pub margin: f64,
    pub worst_node: Option<usize>,
    pub worst_coord: Option<Vec<f64>>,
}

impl HypothesisCheck {
    fn from_scan(pass: bool, margin: f64, worst: Option<usize>, grid: &GridSpec) -> Self {
        let worst_coord =
            worst.map(|idx| grid.node_coord(idx)[..grid.dim()].to_vec());
        HypothesisCheck { pass, margin, worst_node: worst, worst_coord }
    }
}

/// Pass/fail per hypothesis with extracted bounds. `side_growth` and
/// `side_window` are the two side conditions of the negative-level theorem:
/// (s+ − p−)(1 − β−) < p−(s− − r+) and s− + β+ <= s+ + β−.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub h1: HypothesisCheck,
    pub h2: HypothesisCheck,
    pub a_beta: HypothesisCheck,
    pub a_alpha: HypothesisCheck,
    pub a_gamma: HypothesisCheck,
    pub side_growth: HypothesisCheck,
    pub side_window: HypothesisCheck,
    pub bounds: ExponentBounds,
    /// s− > r+ (needed by the positive-level lambda bound; (H1) is pointwise
    /// and does not imply it).
    pub extrema_ordering: bool,
}

impl HypothesisReport {
    /// True when the structural hypotheses hold ((H1), (H2), (A_beta),
    /// (A_alpha), (A_gamma)); the side conditions are reported but gate only
    /// the two-solution theorem, not the solver.
    pub fn all_pass(&self) -> bool {
        self.h1.pass && self.h2.pass && self.a_beta.pass && self.a_alpha.pass && self.a_gamma.pass
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        let b = &self.bounds;
        for (k, v) in [
            ("p_minus", b.p_minus),
            ("p_plus", b.p_plus),
            ("q_minus", b.q_minus),
            ("q_plus", b.q_plus),
            ("r_minus", b.r_minus),
            ("r_plus", b.r_plus),
            ("s_minus", b.s_minus),
            ("s_plus", b.s_plus),
            ("beta_minus", b.beta_minus),
            ("beta_plus", b.beta_plus),
            ("p_star_min", b.p_star_min),
            ("mu1_inf", b.mu1_inf),
            ("mu2_inf", b.mu2_inf),
        ] {
            kv.push((k.to_string(), format!("{v:?}")));
        }
        for (name, c) in [
            ("h1", &self.h1),
            ("h2", &self.h2),
            ("a_beta", &self.a_beta),
            ("a_alpha", &self.a_alpha),
            ("a_gamma", &self.a_gamma),
            ("side_growth", &self.side_growth),
            ("side_window", &self.side_window),
        ] {
            kv.push((format!("{name}.pass"), c.pass.to_string()));
            kv.push((format!("{name}.margin"), format!("{:?}", c.margin)));
            if let Some(coord) = &c.worst_coord {
                let txt: Vec<String> = coord.iter().map(|v| format!("{v:?}")).collect();
                kv.push((format!("{name}.worst_node"), txt.join(" ")));
            }
        }
        kv.push(("extrema_ordering_s_minus_gt_r_plus".into(), self.extrema_ordering.to_string()));
        kv.push(("all_pass".into(), self.all_pass().to_string()));
        kv
    }
}

/// Validate the exponent set against the structural hypotheses at every
/// interior node.
pub fn validate(es: &ExponentSet) -> HypothesisReport {
    let grid = es.grid();
    let n_dim = grid.dim() as f64;

    // scan helper: track the minimum margin and where it occurs
    let scan = |f: &dyn Fn(usize) -> f64| -> (f64, Option<usize>) {
        let mut margin = f64::INFINITY;
        let mut worst = None;
        for &idx in grid.interior_nodes() {
            let m = f(idx);
            if m < margin {
                margin = m;
                worst = Some(idx);
            }
        }
        (margin, worst)
    };

    let v = |field: &ScalarField, idx: usize| field.values()[idx];

    // (H1): 1 < p < q < r < s < p*, p < N pointwise, and s+ < min p*
    let (m_h1, w_h1) = scan(&|idx| {
        let p = v(&es.p, idx);
        let q = v(&es.q, idx);
        let r = v(&es.r, idx);
        let s = v(&es.s, idx);
        let ps = v(&es.p_star, idx);
        let mut m = (p - 1.0).min(q - p).min(r - q).min(s - r);
        m = m.min(n_dim - p);
        if ps.is_finite() {
            m = m.min(ps - s);
        }
        m
    });
    let scalar_h1 = es.bounds.p_star_min - es.bounds.s_plus;
    let h1_margin = m_h1.min(scalar_h1);
    let h1 = HypothesisCheck::from_scan(h1_margin > 0.0, h1_margin, w_h1, grid);

    // (H2): mu1, mu2 >= 0 plus the nonnegativity of the reaction weights
    let (m_h2, w_h2) = scan(&|idx| {
        v(&es.mu1, idx).min(v(&es.mu2, idx)).min(v(&es.m1, idx)).min(v(&es.m2, idx))
    });
    let h2 = HypothesisCheck::from_scan(m_h2 >= 0.0, m_h2, w_h2, grid);

    // (A_beta): 0 < beta(x) < 1
    let (m_ab, w_ab) = scan(&|idx| {
        let b = v(&es.beta, idx);
        b.min(1.0 - b)
    });
    let a_beta = HypothesisCheck::from_scan(m_ab > 0.0, m_ab, w_ab, grid);

    // (A_alpha): alpha > 1, alpha0(x)(1-beta+) >= 1, alpha0(x)(1-beta-) < p*(x)
    let bplus = es.bounds.beta_plus;
    let bminus = es.bounds.beta_minus;
    let (m_aa, w_aa) = scan(&|idx| {
        let a = v(&es.alpha, idx);
        if a <= 1.0 {
            return a - 1.0;
        }
        let a0 = v(&es.alpha0, idx);
        let ps = v(&es.p_star, idx);
        let lower = a0 * (1.0 - bplus) - 1.0;
        let upper = if ps.is_finite() { ps - a0 * (1.0 - bminus) } else { f64::INFINITY };
        lower.min(upper)
    });
    // the lower constraint is non-strict (>= 1): margin exactly 0 still passes
    let a_alpha = HypothesisCheck::from_scan(m_aa >= 0.0, m_aa, w_aa, grid);

    // (A_gamma): gamma > 1, 1 <= s(x) gamma0(x) < p*(x)
    let (m_ag, w_ag) = scan(&|idx| {
        let gm = v(&es.gamma, idx);
        if gm <= 1.0 {
            return gm - 1.0;
        }
        let g0 = v(&es.gamma0, idx);
        let s = v(&es.s, idx);
        let ps = v(&es.p_star, idx);
        let lower = s * g0 - 1.0;
        let upper = if ps.is_finite() { ps - s * g0 } else { f64::INFINITY };
        lower.min(upper)
    });
    let a_gamma = HypothesisCheck::from_scan(m_ag >= 0.0, m_ag, w_ag, grid);

    // side conditions of the negative-level theorem (scalar, from bounds)
    let b = &es.bounds;
    let growth_margin = b.p_minus * (b.s_minus - b.r_plus)
        - (b.s_plus - b.p_minus) * (1.0 - b.beta_minus);
    let side_growth = HypothesisCheck {
        pass: growth_margin > 0.0,
        margin: growth_margin,
        worst_node: None,
        worst_coord: None,
    };
    let window_margin = (b.s_plus + b.beta_minus) - (b.s_minus + b.beta_plus);
    let side_window = HypothesisCheck {
        pass: window_margin >= 0.0,
        margin: window_margin,
        worst_node: None,
        worst_coord: None,
    };

    HypothesisReport {
        h1,
        h2,
        a_beta,
        a_alpha,
        a_gamma,
        side_growth,
        side_window,
        bounds: es.bounds,
        extrema_ordering: b.s_minus > b.r_plus,
    }
}

// ------------------------- modulars and norms -------------------------

/// rho(u) = ∫ |u|^{h(x)} dx over interior nodes.
pub fn modular(u: &ScalarField, h: &ScalarField) -> f64 {
    let grid = u.grid();
    debug_assert!(grid.same_layout(h.grid()));
    let mut acc = 0.0;
    for &idx in grid.interior_nodes() {
        let a = u.values()[idx].abs();
        if a > 0.0 {
            acc += a.powf(h.values()[idx]);
        }
    }
    acc * grid.cell_volume()
}

/// rho_T(v) = ∫ |v|^p + mu1 |v|^q + mu2 |v|^r over interior nodes.
pub fn multiphase_modular(v: &ScalarField, es: &ExponentSet) -> f64 {
    let grid = v.grid();
    debug_assert!(grid.same_layout(es.grid()));
    let mut acc = 0.0;
    for &idx in grid.interior_nodes() {
        let a = v.values()[idx].abs();
        if a > 0.0 {
            acc += a.powf(es.p.values()[idx])
                + es.mu1.values()[idx] * a.powf(es.q.values()[idx])
                + es.mu2.values()[idx] * a.powf(es.r.values()[idx]);
        }
    }
    acc * grid.cell_volume()
}

/// Shared Luxemburg solver. `modular_at` maps ln(zeta) to the modular of
/// u/zeta; it must be strictly decreasing, with limits +inf and 0. Log-space
/// bisection over the bracket [2^-60, 2^60], geometrically expanded if the
/// bracket does not straddle 1, down to relative tolerance `TOL_LUX`.
fn luxemburg_solve(modular_at: impl Fn(f64) -> f64) -> f64 {
    const LN2: f64 = std::f64::consts::LN_2;
    let mut lo = -60.0 * LN2;
    let mut hi = 60.0 * LN2;
    let mut flo = modular_at(lo);
    let mut fhi = modular_at(hi);
    let mut guard = 0;
    while flo < 1.0 && guard < 64 {
        hi = lo;
        fhi = flo;
        lo -= 60.0 * LN2;
        flo = modular_at(lo);
        guard += 1;
    }
    while fhi > 1.0 && guard < 128 {
        lo = hi;
        flo = fhi;
        hi += 60.0 * LN2;
        fhi = modular_at(hi);
        guard += 1;
    }
    debug_assert!(flo >= 1.0 && fhi <= 1.0);
    let _ = (flo, fhi);
    // relative tolerance on zeta is absolute tolerance on ln(zeta)
    let mut iter = 0;
    while hi - lo > TOL_LUX && iter < 400 {
        let mid = 0.5 * (lo + hi);
        if modular_at(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    (0.5 * (lo + hi)).exp()
}

/// Luxemburg norm |u|_{h(x)}: the unique zeta with rho(u/zeta) = 1; 0 for the
/// zero field.
pub fn luxemburg_norm(u: &ScalarField, h: &ScalarField) -> f64 {
    let grid = u.grid();
    debug_assert!(grid.same_layout(h.grid()));
    // prefilter nonzero entries once; modular(u/zeta) = sum exp(h (ln|u| - ln zeta))
    let mut terms: Vec<(f64, f64)> = Vec::new();
    for &idx in grid.interior_nodes() {
        let a = u.values()[idx].abs();
        if a > 0.0 {
            terms.push((a.ln(), h.values()[idx]));
        }
    }
    if terms.is_empty() {
        return 0.0;
    }
    let vol = grid.cell_volume();
    luxemburg_solve(|ln_zeta| {
        let mut acc = 0.0;
        for &(ln_a, hv) in &terms {
            acc += (hv * (ln_a - ln_zeta)).exp();
        }
        acc * vol
    })
}

/// Multi-phase Luxemburg norm ||v||_T.
pub fn multiphase_norm(v: &ScalarField, es: &ExponentSet) -> f64 {
    struct Term {
        ln_a: f64,
        p: f64,
        q: f64,
        r: f64,
        mu1: f64,
        mu2: f64,
    }
    let grid = v.grid();
    debug_assert!(grid.same_layout(es.grid()));
    let mut terms: Vec<Term> = Vec::new();
    for &idx in grid.interior_nodes() {
        let a = v.values()[idx].abs();
        if a > 0.0 {
            terms.push(Term {
                ln_a: a.ln(),
                p: es.p.values()[idx],
                q: es.q.values()[idx],
                r: es.r.values()[idx],
                mu1: es.mu1.values()[idx],
                mu2: es.mu2.values()[idx],
            });
        }
    }
    if terms.is_empty() {
        return 0.0;
    }
    let vol = grid.cell_volume();
    luxemburg_solve(|ln_zeta| {
        let mut acc = 0.0;
        for t in &terms {
            let l = t.ln_a - ln_zeta;
            acc += (t.p * l).exp() + t.mu1 * (t.q * l).exp() + t.mu2 * (t.r * l).exp();
        }
        acc * vol
    })
}

/// Equivalent W_0^{1,T} norm ||u||_{1,T,0} = || |∇u| ||_T.
pub fn sobolev_norm(u: &ScalarField, es: &ExponentSet) -> f64 {
    let mag = gradient(u).magnitude();
    multiphase_norm(&mag, es)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::grid::build_grid;

    fn unit_interval(n: usize) -> Arc<GridSpec> {
        build_grid(1, n, 0.0, 1.0, &parse("1").unwrap()).unwrap()
    }

    fn const_field(grid: &Arc<GridSpec>, c: f64) -> ScalarField {
        ScalarField::from_fn(grid, |_| c)
    }

    /// Exponent set with constant fields, for closed-form checks.
    pub(crate) fn constant_es(
        grid: &Arc<GridSpec>,
        p: f64,
        q: f64,
        r: f64,
        s: f64,
        mu: f64,
    ) -> ExponentSet {
        ExponentSet::new(
            grid.clone(),
            ExponentFields {
                p: const_field(grid, p),
                q: const_field(grid, q),
                r: const_field(grid, r),
                s: const_field(grid, s),
                beta: const_field(grid, 0.5),
                alpha: const_field(grid, 1.1),
                gamma: const_field(grid, 6.0),
                mu1: const_field(grid, mu),
                mu2: const_field(grid, mu),
                m1: const_field(grid, 1.0),
                m2: const_field(grid, 1.0),
            },
        )
        .unwrap()
    }

    #[test]
    fn modular_of_zero_and_one() {
        let g = unit_interval(101);
        let h = const_field(&g, 2.7);
        assert_eq!(modular(&ScalarField::zeros(&g), &h), 0.0);
        // u = 1 on a unit-measure domain: integrand identically 1
        let one = const_field(&g, 1.0);
        let m = modular(&one, &h);
        assert!((m - 1.0).abs() <= 3.0 * g.spacing());
    }

    #[test]
    fn modular_of_coordinate_squared() {
        let g = unit_interval(101);
        let h = const_field(&g, 2.0);
        let u = ScalarField::from_fn(&g, |x| x[0]);
        assert!((modular(&u, &h) - 1.0 / 3.0).abs() < 1e-2);
    }

    #[test]
    fn luxemburg_norm_constant_exponent_closed_form() {
        let g = unit_interval(101);
        let h = const_field(&g, 2.0);
        let u = ScalarField::from_fn(&g, |x| x[0]);
        // zeta = sqrt(int u^2); continuum value 1/sqrt(3)
        let norm = luxemburg_norm(&u, &h);
        assert!((norm - 1.0 / 3f64.sqrt()).abs() < 1e-2);
        let discrete = modular(&u, &h).sqrt();
        assert!((norm - discrete).abs() <= 1e-9 * discrete);
        assert_eq!(luxemburg_norm(&ScalarField::zeros(&g), &h), 0.0);
    }

    #[test]
    fn norm_one_iff_modular_one() {
        // Prop 2.2(i): scaling u by its norm gives modular exactly 1
        let g = unit_interval(81);
        let h = ScalarField::from_fn(&g, |x| 2.0 + x[0]);
        let u = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() + 0.2);
        let norm = luxemburg_norm(&u, &h);
        let scaled = u.scaled(1.0 / norm);
        assert!((modular(&scaled, &h) - 1.0).abs() < 10.0 * TOL_LUX);
    }

    #[test]
    fn modular_norm_sandwich_both_branches() {
        // Prop 2.2(ii) on fields of several scales
        let g = unit_interval(81);
        let h = ScalarField::from_fn(&g, |x| 2.0 + x[0]); // h- = 2, h+ = 3 on interior
        let mut h_minus = f64::INFINITY;
        let mut h_plus = f64::NEG_INFINITY;
        for &idx in g.interior_nodes() {
            h_minus = h_minus.min(h.values()[idx]);
            h_plus = h_plus.max(h.values()[idx]);
        }
        for scale in [1e-2, 0.3, 0.999, 1.7, 40.0] {
            let u = ScalarField::from_fn(&g, |x| scale * ((5.0 * x[0]).cos() + 1.3));
            let norm = luxemburg_norm(&u, &h);
            let rho = modular(&u, &h);
            let slack = 1.0 + 10.0 * TOL_LUX;
            if norm > 1.0 {
                assert!(norm.powf(h_minus) <= rho * slack, "scale {scale}");
                assert!(rho <= norm.powf(h_plus) * slack, "scale {scale}");
            } else {
                assert!(norm.powf(h_plus) <= rho * slack, "scale {scale}");
                assert!(rho <= norm.powf(h_minus) * slack, "scale {scale}");
            }
        }
    }

    #[test]
    fn multiphase_reduces_to_plain_modular() {
        let g = unit_interval(51);
        let es = constant_es(&g, 2.0, 2.5, 3.0, 4.0, 0.0);
        let v = ScalarField::from_fn(&g, |x| x[0] - 0.3);
        assert_eq!(multiphase_modular(&v, &es), modular(&v, &es.p));
        assert_eq!(multiphase_modular(&ScalarField::zeros(&g), &es), 0.0);
    }

    #[test]
    fn multiphase_modular_of_unit_field_with_unit_weights() {
        let g = unit_interval(101);
        let es = constant_es(&g, 2.0, 2.5, 3.0, 4.0, 1.0);
        let v = const_field(&g, 1.0);
        let m = multiphase_modular(&v, &es);
        assert!((m - 3.0).abs() <= 9.0 * g.spacing());
    }

    #[test]
    fn multiphase_norm_unit_rescaling() {
        let g = unit_interval(81);
        let es = constant_es(&g, 2.0, 2.5, 3.0, 4.0, 1.0);
        let v = ScalarField::from_fn(&g, |x| 3.0 * x[0] + 0.1);
        let norm = multiphase_norm(&v, &es);
        let scaled = v.scaled(1.0 / norm);
        assert!((multiphase_modular(&scaled, &es) - 1.0).abs() < 10.0 * TOL_LUX);
        assert_eq!(multiphase_norm(&ScalarField::zeros(&g), &es), 0.0);
    }

    #[test]
    fn multiphase_norm_constant_exponent_closed_form() {
        let g = unit_interval(101);
        let es = constant_es(&g, 3.0, 3.0, 3.0, 4.0, 0.0);
        let v = ScalarField::from_fn(&g, |x| x[0] + 0.5);
        let want = modular(&v, &es.p).powf(1.0 / 3.0);
        let got = multiphase_norm(&v, &es);
        assert!((got - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn sobolev_norm_homogeneous_for_constant_exponents() {
        let g = unit_interval(101);
        let es = constant_es(&g, 2.0, 2.0, 2.0, 4.0, 0.0);
        let u = ScalarField::from_fn_dirichlet(&g, |x| x[0] * (1.0 - x[0]));
        let t = 3.7;
        let a = sobolev_norm(&u.scaled(t), &es);
        let b = sobolev_norm(&u, &es);
        assert!(b > 0.0);
        assert!((a - t * b).abs() <= 1e-8 * a);
        assert_eq!(sobolev_norm(&ScalarField::zeros(&g), &es), 0.0);
    }

    #[test]
    fn multiphase_modular_strictly_decreasing_in_zeta() {
        let g = unit_interval(51);
        let es = constant_es(&g, 2.0, 2.5, 3.0, 4.0, 0.7);
        let v = ScalarField::from_fn(&g, |x| (7.0 * x[0]).sin() + 1.1);
        let mut prev = f64::INFINITY;
        for zeta in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let m = multiphase_modular(&v.scaled(1.0 / zeta), &es);
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn ordering_violation_fails_h1() {
        let g = build_grid(3, 7, -1.0, 1.0, &parse("1").unwrap()).unwrap();
        let es = constant_es(&g, 3.0, 2.0, 3.5, 4.0, 0.0); // p > q everywhere
        let report = validate(&es);
        assert!(!report.h1.pass);
        assert!(report.h1.margin < 0.0);
        assert!(report.h1.worst_node.is_some());
    }
}
