//! The discrete energy J_λ, its term breakdown, its exact Gateaux derivative,
//! the Nehari scalars, and both directions of the Hardy-type inequality.
//!
//! With T-weights w_e = 1/e(x), the energy of a Dirichlet-zero field u is
//!
//!   J_λ(u) = ∫ ( |∇u|^p/p + mu1 |∇u|^q/q + mu2 |∇u|^r/r )          (gradient part)
//!          + ∫ ( (|u|/|x|)^p/p + mu1 (|u|/|x|)^q/q + mu2 (|u|/|x|)^r/r )   (Hardy part)
//!          − ∫ m1 |u|^{s}/s − λ ∫ m2 |u|^{1−β}/(1−β),
//!
//! every integral running over interior nodes with node quadrature, |x|
//! floored at `eps_x`, and the discrete gradient of `grid::gradient`. The
//! returned gradient field is the derivative of exactly this discretization
//! (stencils, quadrature and floors included), so central differences of J
//! reproduce it to roundoff; the only deliberate mismatch is the u^{−β}
//! floor `max(|u|, eps_u)^{−β}` inside the derivative of the singular term,
//! which the energy itself does not need (|u|^{1−β} is continuous at 0).
//!
//! All quantities that scale along the ray t ↦ t·u are also exposed through
//! [`RayProfile`], which decomposes the energy into per-node power laws once
//! and then evaluates Φ(t) = J_λ(tu), Φ-slope data and the classification
//! scalar at any t with one pass.

use thiserror::Error;

use crate::grid::{gradient, GridSpec, ScalarField, StencilKind};
use crate::spaces::{sobolev_norm, multiphase_norm, ExponentSet};

#[derive(Debug, Clone, Error)]
pub enum EnergyError {
    #[error("Hardy upper bound needs dimension >= 3, grid has {0}")]
    DimensionUnsupported(usize),
}

/// Floors applied when evaluating the singular factors.
#[derive(Debug, Clone, Copy)]
pub struct RegularizationPolicy {
    /// Floor for |x| in the Hardy potential. Defaults to h/2.
    pub eps_x: f64,
    /// Relative floor for |u| inside u^{−β}: the absolute floor is
    /// `eps_u_rel * max|u|`. Defaults to 1e-8.
    pub eps_u_rel: f64,
}

impl RegularizationPolicy {
    pub fn for_grid(grid: &GridSpec) -> Self {
        RegularizationPolicy { eps_x: 0.5 * grid.spacing(), eps_u_rel: 1e-8 }
    }

    pub fn with_eps_x(grid: &GridSpec, eps_x: Option<f64>, eps_u_rel: f64) -> Self {
        RegularizationPolicy {
            eps_x: eps_x.unwrap_or(0.5 * grid.spacing()),
            eps_u_rel,
        }
    }

    pub fn eps_u_for(&self, u: &ScalarField) -> f64 {
        let scale = u.max_abs_interior();
        if scale > 0.0 {
            self.eps_u_rel * scale
        } else {
            self.eps_u_rel
        }
    }
}

/// Per-term values of J_λ. `total` is the exact sum
/// `rho_grad + hardy - source - singular`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    pub rho_grad: f64,
    pub hardy: f64,
    pub source: f64,
    pub singular: f64,
    pub total: f64,
    pub lambda: f64,
}

/// The four Nehari-form integrals of ⟨J'(u),u⟩ (all unweighted by 1/e(x)):
/// rho = ρ_T(∇u), hardy = ⟨F'(u),u⟩, source = ∫ m1|u|^s,
/// singular = λ ∫ m2|u|^{1−β}.
#[derive(Debug, Clone, Copy)]
pub struct NehariParts {
    pub rho: f64,
    pub hardy: f64,
    pub source: f64,
    pub singular: f64,
}

impl NehariParts {
    pub fn value(&self) -> f64 {
        self.rho + self.hardy - self.source - self.singular
    }
    /// Magnitude scale used for root residuals: |ϱ-part| + |source| + |singular|.
    pub fn scale(&self) -> f64 {
        self.rho + self.hardy + self.source + self.singular
    }
}

// ------------------------- ray profile -------------------------

/// Power-law decomposition of J_λ along the ray t ↦ t·u.
///
/// Every interior node contributes coefficient·t^exponent terms; evaluating
/// at t costs five `exp` calls per node. At t = 1 the values coincide
/// bitwise with the direct quadrature (exp(e·ln 1) = 1 exactly).
pub struct RayProfile {
    lambda: f64,
    // exponents per interior node
    ep: Vec<f64>,
    eq: Vec<f64>,
    er: Vec<f64>,
    es_: Vec<f64>,
    esig: Vec<f64>, // 1 - beta
    // coefficients per interior node (cell volume folded in; mu weights folded
    // into the q/r families; lambda folded into the singular family)
    grad_p: Vec<f64>,
    grad_q: Vec<f64>,
    grad_r: Vec<f64>,
    hardy_p: Vec<f64>,
    hardy_q: Vec<f64>,
    hardy_r: Vec<f64>,
    source: Vec<f64>,
    singular: Vec<f64>,
}

impl RayProfile {
    pub fn new(
        u: &ScalarField,
        es: &ExponentSet,
        lambda: f64,
        regpol: &RegularizationPolicy,
    ) -> Self {
        let grid = u.grid();
        debug_assert!(grid.same_layout(es.grid()));
        let vol = grid.cell_volume();
        let mag = gradient(u).magnitude();
        let m = grid.interior_count();
        let mut prof = RayProfile {
            lambda,
            ep: Vec::with_capacity(m),
            eq: Vec::with_capacity(m),
            er: Vec::with_capacity(m),
            es_: Vec::with_capacity(m),
            esig: Vec::with_capacity(m),
            grad_p: Vec::with_capacity(m),
            grad_q: Vec::with_capacity(m),
            grad_r: Vec::with_capacity(m),
            hardy_p: Vec::with_capacity(m),
            hardy_q: Vec::with_capacity(m),
            hardy_r: Vec::with_capacity(m),
            source: Vec::with_capacity(m),
            singular: Vec::with_capacity(m),
        };
        for &idx in grid.interior_nodes() {
            let p = es.p.values()[idx];
            let q = es.q.values()[idx];
            let r = es.r.values()[idx];
            let s = es.s.values()[idx];
            let sig = 1.0 - es.beta.values()[idx];
            let mu1 = es.mu1.values()[idx];
            let mu2 = es.mu2.values()[idx];
            let g = mag.values()[idx];
            let a = u.values()[idx].abs();
            let rx = grid.radii()[idx].max(regpol.eps_x);
            let ratio = a / rx;
            prof.ep.push(p);
            prof.eq.push(q);
            prof.er.push(r);
            prof.es_.push(s);
            prof.esig.push(sig);
            prof.grad_p.push(if g > 0.0 { vol * g.powf(p) } else { 0.0 });
            prof.grad_q.push(if g > 0.0 { vol * mu1 * g.powf(q) } else { 0.0 });
            prof.grad_r.push(if g > 0.0 { vol * mu2 * g.powf(r) } else { 0.0 });
            prof.hardy_p.push(if ratio > 0.0 { vol * ratio.powf(p) } else { 0.0 });
            prof.hardy_q.push(if ratio > 0.0 { vol * mu1 * ratio.powf(q) } else { 0.0 });
            prof.hardy_r.push(if ratio > 0.0 { vol * mu2 * ratio.powf(r) } else { 0.0 });
            prof.source.push(if a > 0.0 { vol * es.m1.values()[idx] * a.powf(s) } else { 0.0 });
            prof.singular.push(if a > 0.0 {
                vol * lambda * es.m2.values()[idx] * a.powf(sig)
            } else {
                0.0
            });
        }
        prof
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Energy terms of J_λ(tu): each family weighted by 1/exponent.
    pub fn breakdown_at(&self, t: f64) -> EnergyBreakdown {
        let lt = t.ln();
        let mut rho_grad = 0.0;
        let mut hardy = 0.0;
        let mut source = 0.0;
        let mut singular = 0.0;
        for i in 0..self.ep.len() {
            let tp = (self.ep[i] * lt).exp();
            let tq = (self.eq[i] * lt).exp();
            let tr = (self.er[i] * lt).exp();
            let ts = (self.es_[i] * lt).exp();
            let tg = (self.esig[i] * lt).exp();
            rho_grad += tp * self.grad_p[i] / self.ep[i]
                + tq * self.grad_q[i] / self.eq[i]
                + tr * self.grad_r[i] / self.er[i];
            hardy += tp * self.hardy_p[i] / self.ep[i]
                + tq * self.hardy_q[i] / self.eq[i]
                + tr * self.hardy_r[i] / self.er[i];
            source += ts * self.source[i] / self.es_[i];
            singular += tg * self.singular[i] / self.esig[i];
        }
        EnergyBreakdown {
            rho_grad,
            hardy,
            source,
            singular,
            total: rho_grad + hardy - source - singular,
            lambda: self.lambda,
        }
    }

    /// Nehari-form integrals of ⟨J'(tu), tu⟩ (unweighted families).
    pub fn nehari_parts_at(&self, t: f64) -> NehariParts {
        let lt = t.ln();
        let mut rho = 0.0;
        let mut hardy = 0.0;
        let mut source = 0.0;
        let mut singular = 0.0;
        for i in 0..self.ep.len() {
            let tp = (self.ep[i] * lt).exp();
            let tq = (self.eq[i] * lt).exp();
            let tr = (self.er[i] * lt).exp();
            rho += tp * self.grad_p[i] + tq * self.grad_q[i] + tr * self.grad_r[i];
            hardy += tp * self.hardy_p[i] + tq * self.hardy_q[i] + tr * self.hardy_r[i];
            source += (self.es_[i] * lt).exp() * self.source[i];
            singular += (self.esig[i] * lt).exp() * self.singular[i];
        }
        NehariParts { rho, hardy, source, singular }
    }

    /// Second-form integrals: every family carries its exponent as a factor,
    /// per d/dt ⟨J'(tu), tu⟩ · t at t.
    pub fn second_parts_at(&self, t: f64) -> NehariParts {
        let lt = t.ln();
        let mut rho = 0.0;
        let mut hardy = 0.0;
        let mut source = 0.0;
        let mut singular = 0.0;
        for i in 0..self.ep.len() {
            let tp = self.ep[i] * (self.ep[i] * lt).exp();
            let tq = self.eq[i] * (self.eq[i] * lt).exp();
            let tr = self.er[i] * (self.er[i] * lt).exp();
            rho += tp * self.grad_p[i] + tq * self.grad_q[i] + tr * self.grad_r[i];
            hardy += tp * self.hardy_p[i] + tq * self.hardy_q[i] + tr * self.hardy_r[i];
            source += self.es_[i] * (self.es_[i] * lt).exp() * self.source[i];
            singular += self.esig[i] * (self.esig[i] * lt).exp() * self.singular[i];
        }
        NehariParts { rho, hardy, source, singular }
    }

    /// (Φ(t), N(t), S(t)) in one pass: energy, Nehari scalar ⟨J'(tu),tu⟩ and
    /// the factor-weighted second form.
    pub fn triple_at(&self, t: f64) -> (f64, f64, f64) {
        let lt = t.ln();
        let mut phi = 0.0;
        let mut neh = 0.0;
        let mut sec = 0.0;
        for i in 0..self.ep.len() {
            let cp = self.grad_p[i] + self.hardy_p[i];
            let cq = self.grad_q[i] + self.hardy_q[i];
            let cr = self.grad_r[i] + self.hardy_r[i];
            let tp = (self.ep[i] * lt).exp() * cp;
            let tq = (self.eq[i] * lt).exp() * cq;
            let tr = (self.er[i] * lt).exp() * cr;
            let ts = (self.es_[i] * lt).exp() * self.source[i];
            let tg = (self.esig[i] * lt).exp() * self.singular[i];
            phi += tp / self.ep[i] + tq / self.eq[i] + tr / self.er[i]
                - ts / self.es_[i]
                - tg / self.esig[i];
            neh += tp + tq + tr - ts - tg;
            sec += self.ep[i] * tp + self.eq[i] * tq + self.er[i] * tr
                - self.es_[i] * ts
                - self.esig[i] * tg;
        }
        (phi, neh, sec)
    }
}

// ------------------------- public operations -------------------------

/// Evaluate J_λ(u) with its term breakdown.
pub fn energy(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    regpol: &RegularizationPolicy,
) -> EnergyBreakdown {
    RayProfile::new(u, es, lambda, regpol).breakdown_at(1.0)
}

/// ⟨J'_λ(u), u⟩ assembled term by term (Nehari residual of u).
pub fn nehari_derivative(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    regpol: &RegularizationPolicy,
) -> f64 {
    RayProfile::new(u, es, lambda, regpol).nehari_parts_at(1.0).value()
}

/// The classification scalar ⟨J''-form⟩: families weighted by their exponents.
/// On the Nehari set this equals the second fibering derivative at t = 1.
pub fn nehari_second(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    regpol: &RegularizationPolicy,
) -> f64 {
    RayProfile::new(u, es, lambda, regpol).second_parts_at(1.0).value()
}

/// Discrete residual field G(u): the exact Gateaux derivative of the
/// discretized J_λ with respect to interior node values, divided by the cell
/// volume, zero at non-interior nodes. `grid::inner_product(G, φ)` equals
/// d/dε J_λ(u + εφ)|_0 for any Dirichlet-zero φ.
pub fn energy_gradient(
    u: &ScalarField,
    es: &ExponentSet,
    lambda: f64,
    regpol: &RegularizationPolicy,
) -> ScalarField {
    let grid = u.grid().clone();
    debug_assert!(grid.same_layout(es.grid()));
    let dim = grid.dim();
    let h = grid.spacing();
    let grad = gradient(u);
    let eps_u = regpol.eps_u_for(u);
    let mut g = ScalarField::zeros(&grid);
    let gv = g.values_mut();

    for &idx in grid.interior_nodes() {
        let p = es.p.values()[idx];
        let q = es.q.values()[idx];
        let r = es.r.values()[idx];
        let mu1 = es.mu1.values()[idx];
        let mu2 = es.mu2.values()[idx];

        // gradient-term flux, scattered through the adjoint of the stencil
        let mut mag2 = 0.0;
        for a in 0..dim {
            let c = grad.component(idx, a);
            mag2 += c * c;
        }
        let mag = mag2.sqrt();
        if mag > 0.0 {
            // (|∇u|^{p-2} + mu1 |∇u|^{q-2} + mu2 |∇u|^{r-2}) computed via
            // mag^{e-1}/mag, stable for exponents below 2
            let w = (mag.powf(p - 1.0) + mu1 * mag.powf(q - 1.0) + mu2 * mag.powf(r - 1.0)) / mag;
            for a in 0..dim {
                let psi = w * grad.component(idx, a);
                let s = grid.stride(a);
                match grid.stencil(idx, a) {
                    StencilKind::Central => {
                        let c = psi / (2.0 * h);
                        gv[idx + s] += c;
                        gv[idx - s] -= c;
                    }
                    StencilKind::Forward => {
                        let c = psi / h;
                        gv[idx + s] += c;
                        gv[idx] -= c;
                    }
                    StencilKind::Backward => {
                        let c = psi / h;
                        gv[idx] += c;
                        gv[idx - s] -= c;
                    }
                    StencilKind::None => {}
                }
            }
        }

        // pointwise terms
        let uv = u.values()[idx];
        let a = uv.abs();
        let sign = if uv > 0.0 {
            1.0
        } else if uv < 0.0 {
            -1.0
        } else {
            0.0
        };
        if sign != 0.0 {
            let rx = grid.radii()[idx].max(regpol.eps_x);
            let ratio = a / rx;
            let hardy = if ratio > 0.0 {
                (ratio.powf(p - 1.0) + mu1 * ratio.powf(q - 1.0) + mu2 * ratio.powf(r - 1.0)) / rx
            } else {
                0.0
            };
            let s_exp = es.s.values()[idx];
            let source = es.m1.values()[idx] * a.powf(s_exp - 1.0);
            let beta = es.beta.values()[idx];
            let singular = lambda * es.m2.values()[idx] * a.max(eps_u).powf(-beta);
            gv[idx] += sign * (hardy - source - singular);
        }
    }
    // scatter writes only to interior nodes by stencil construction, so the
    // Dirichlet-zero contract already holds
    g
}

// ------------------------- Hardy inequality checks -------------------------

/// Empirically estimated embedding constants feeding the Hardy upper bound.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingConstants {
    /// max over the battery of ∫|∇u|^{r+} / ||u||^{φ0}
    pub c_hat1: f64,
    /// max over the battery of ∫|∇u|^{p-} / ||u||^{φ0}
    pub c_hat2: f64,
    /// max over the battery of the direct ratio
    /// F(u) p^- / ((1+|mu1|∞+|mu2|∞) max{C_N(r+),C_N(p-)} ||u||^{φ0});
    /// this is the constant the upper check uses.
    pub c_hat_m: f64,
    pub battery: usize,
    pub seed: u64,
}

/// C_N(t) = ( t / ((N−2)(t−1)) )^t, the Hardy constant of a single exponent.
pub fn hardy_constant(n_dim: usize, t: f64) -> f64 {
    let d = (n_dim as f64 - 2.0) * (t - 1.0);
    (t / d).powf(t)
}

fn phi0(es: &ExponentSet, norm: f64) -> f64 {
    if norm < 1.0 {
        es.bounds.p_minus
    } else {
        es.bounds.r_plus
    }
}

/// max{C_N(r+), C_N(p-)} together with the weight factor (1 + |mu|∞ sums).
fn hardy_factor(es: &ExponentSet) -> Result<(f64, f64), EnergyError> {
    let n_dim = es.grid().dim();
    if n_dim < 3 {
        return Err(EnergyError::DimensionUnsupported(n_dim));
    }
    let max_c = hardy_constant(n_dim, es.bounds.r_plus).max(hardy_constant(n_dim, es.bounds.p_minus));
    let weights = 1.0 + es.bounds.mu1_inf + es.bounds.mu2_inf;
    Ok((max_c, weights))
}

/// Estimate the embedding constants over a battery of smooth fields (sign
/// varying and bump-like) at mixed scales.
pub fn estimate_embedding_constants(
    es: &ExponentSet,
    regpol: &RegularizationPolicy,
    battery: usize,
    seed: u64,
) -> Result<EmbeddingConstants, EnergyError> {
    use rand::Rng;
    let (max_c, weights) = hardy_factor(es)?;
    let grid = es.grid();
    let mut rng = crate::battery::rng_for(seed);
    let mut c1 = 0.0f64;
    let mut c2 = 0.0f64;
    let mut cm = 0.0f64;
    let b = &es.bounds;
    for raw in crate::battery::estimator_battery(grid, battery, seed) {
        let scale_exp: f64 = rng.random_range(-2.0..2.0);
        let norm0 = sobolev_norm(&raw, es);
        if !(norm0 > 0.0) {
            continue;
        }
        let u = raw.scaled(10f64.powf(scale_exp) / norm0);
        let norm = sobolev_norm(&u, es);
        let ph = phi0(es, norm);
        let denom = norm.powf(ph);
        let mag = gradient(&u).magnitude();
        let mut int_rp = 0.0;
        let mut int_pm = 0.0;
        for &idx in grid.interior_nodes() {
            let gmag = mag.values()[idx];
            if gmag > 0.0 {
                int_rp += gmag.powf(b.r_plus);
                int_pm += gmag.powf(b.p_minus);
            }
        }
        int_rp *= grid.cell_volume();
        int_pm *= grid.cell_volume();
        c1 = c1.max(int_rp / denom);
        c2 = c2.max(int_pm / denom);
        let f_u = energy(&u, es, 0.0, regpol).hardy;
        cm = cm.max(f_u * b.p_minus / (weights * max_c * denom));
    }
    Ok(EmbeddingConstants { c_hat1: c1, c_hat2: c2, c_hat_m: cm, battery, seed })
}

#[derive(Debug, Clone, Copy)]
pub struct HardyUpper {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// exponent case used: p- when ||u|| < 1, r+ otherwise
    pub phi0: f64,
    pub sobolev_norm: f64,
}

/// Upper Hardy-type bound: F(u) <= C_N(p,r) ||u||_{1,T,0}^{φ0} with
/// C_N(p,r) = (p-)^{-1} c_hat_M (1+|mu1|∞+|mu2|∞) max{C_N(r+), C_N(p-)}.
pub fn hardy_check_upper(
    u: &ScalarField,
    es: &ExponentSet,
    regpol: &RegularizationPolicy,
    emb: &EmbeddingConstants,
) -> Result<HardyUpper, EnergyError> {
    let (max_c, weights) = hardy_factor(es)?;
    if u.is_zero_interior() {
        return Ok(HardyUpper { lhs: 0.0, rhs: 0.0, pass: true, phi0: es.bounds.p_minus, sobolev_norm: 0.0 });
    }
    let lhs = energy(u, es, 0.0, regpol).hardy;
    let norm = sobolev_norm(u, es);
    let ph = phi0(es, norm);
    let rhs = emb.c_hat_m / es.bounds.p_minus * weights * max_c * norm.powf(ph);
    Ok(HardyUpper { lhs, rhs, pass: lhs <= rhs * (1.0 + 1e-9), phi0: ph, sobolev_norm: norm })
}

#[derive(Debug, Clone, Copy)]
pub struct HardyLower {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// tau = p- when ||u||_T >= 1, r+ when below (the modular-norm case that fired)
    pub tau: f64,
    pub norm_t: f64,
    /// sup of |x| over interior nodes, rounded up to the next h/2 multiple
    pub x_star_geometric: f64,
    /// the coarser bound N · max_i |x_i|
    pub x_star_paper: f64,
}

/// Lower Hardy-type bound: ∫(|u|/|x|-form, unweighted) >= x_*^{-τ} ||u||_T^τ.
pub fn hardy_check_lower(
    u: &ScalarField,
    es: &ExponentSet,
    regpol: &RegularizationPolicy,
) -> HardyLower {
    let grid = u.grid();
    let half_h = 0.5 * grid.spacing();
    let mut sup_r = 0.0f64;
    let mut sup_coord = 0.0f64;
    for &idx in grid.interior_nodes() {
        sup_r = sup_r.max(grid.radii()[idx]);
        let c = grid.node_coord(idx);
        for d in 0..grid.dim() {
            sup_coord = sup_coord.max(c[d].abs());
        }
    }
    let x_star = ((sup_r / half_h).ceil() * half_h).max(half_h);
    let x_star_paper = grid.dim() as f64 * sup_coord;
    if u.is_zero_interior() {
        return HardyLower {
            lhs: 0.0,
            rhs: 0.0,
            pass: true,
            tau: es.bounds.p_minus,
            norm_t: 0.0,
            x_star_geometric: x_star,
            x_star_paper,
        };
    }
    let lhs = RayProfile::new(u, es, 0.0, regpol).nehari_parts_at(1.0).hardy;
    let norm_t = multiphase_norm(u, es);
    let tau = if norm_t >= 1.0 { es.bounds.p_minus } else { es.bounds.r_plus };
    let rhs = (norm_t / x_star).powf(tau);
    HardyLower {
        lhs,
        rhs,
        pass: lhs >= rhs * (1.0 - 1e-9),
        tau,
        norm_t,
        x_star_geometric: x_star,
        x_star_paper,
    }
}
