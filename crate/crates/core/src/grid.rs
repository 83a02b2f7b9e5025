//! Uniform Cartesian discretization of a bounded domain in R^N (N = 1, 2, 3)
//! with Dirichlet-zero boundary handling, discrete gradients and node
//! quadrature.
//!
//! A node is *interior* when the domain indicator is nonzero there and at all
//! 2N axis neighbors, and every neighbor index stays inside the bounding box.
//! Everything within one stencil width of the domain boundary is treated as
//! boundary: fields that model W_0^{1,T} functions are zero on non-interior
//! nodes and every quadrature runs over interior nodes only.
//!
//! All reductions are plain sequential sums in ascending node order, so
//! results are bitwise reproducible run to run.

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{EvalError, Expr};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Error)]
pub enum GridError {
    #[error("dimension must be 1..=3, got {0}")]
    BadDim(usize),
    #[error("need at least 3 nodes per axis, got {0}")]
    TooFewNodes(usize),
    #[error("degenerate bounding box [{lo}, {hi}]")]
    DegenerateBox { lo: f64, hi: f64 },
    #[error("domain indicator selects no interior node")]
    EmptyDomain,
    #[error("domain indicator failed to evaluate: {0}")]
    Indicator(#[from] EvalError),
}

/// Stencil used per interior node and axis by the discrete gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StencilKind {
    /// Node is non-interior, or both axis neighbors are non-interior.
    None = 0,
    Central = 1,
    Forward = 2,
    Backward = 3,
}

#[derive(Debug)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    lo: f64,
    hi: f64,
    h: f64,
    strides: [usize; MAX_DIM],
    node_count: usize,
    interior: Vec<bool>,
    interior_nodes: Vec<usize>,
    radii: Vec<f64>,
    stencils: Vec<u8>,
}

/// Build a grid over `[lo, hi]^dim` with `n` nodes per axis; `domain` is the
/// indicator expression of the open set (nonzero = inside).
pub fn build_grid(
    dim: usize,
    n: usize,
    lo: f64,
    hi: f64,
    domain: &Expr,
) -> Result<Arc<GridSpec>, GridError> {
    if dim == 0 || dim > MAX_DIM {
        return Err(GridError::BadDim(dim));
    }
    if n < 3 {
        return Err(GridError::TooFewNodes(n));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(GridError::DegenerateBox { lo, hi });
    }
    let h = (hi - lo) / (n - 1) as f64;
    let node_count = n.pow(dim as u32);
    let mut strides = [0usize; MAX_DIM];
    for d in 0..dim {
        strides[d] = n.pow((dim - 1 - d) as u32);
    }

    let mut inside = vec![false; node_count];
    let mut radii = vec![0.0; node_count];
    let mut coord = [0.0f64; MAX_DIM];
    for idx in 0..node_count {
        decode(idx, dim, n, &strides, lo, h, &mut coord);
        let x = &coord[..dim];
        inside[idx] = domain.eval(x)? != 0.0;
        radii[idx] = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    }

    let mut interior = vec![false; node_count];
    let mut interior_nodes = Vec::new();
    for idx in 0..node_count {
        if !inside[idx] {
            continue;
        }
        let mut ok = true;
        let mut rem = idx;
        for d in 0..dim {
            let i_d = rem / strides[d];
            rem %= strides[d];
            if i_d == 0 || i_d == n - 1 {
                ok = false;
                break;
            }
            if !inside[idx - strides[d]] || !inside[idx + strides[d]] {
                ok = false;
                break;
            }
        }
        if ok {
            interior[idx] = true;
            interior_nodes.push(idx);
        }
    }
    if interior_nodes.is_empty() {
        return Err(GridError::EmptyDomain);
    }

    let mut stencils = vec![StencilKind::None as u8; node_count * dim];
    for &idx in &interior_nodes {
        for d in 0..dim {
            let minus = interior[idx - strides[d]];
            let plus = interior[idx + strides[d]];
            stencils[idx * dim + d] = match (minus, plus) {
                (true, true) => StencilKind::Central as u8,
                (false, true) => StencilKind::Forward as u8,
                (true, false) => StencilKind::Backward as u8,
                (false, false) => StencilKind::None as u8,
            };
        }
    }

    Ok(Arc::new(GridSpec {
        dim,
        n,
        lo,
        hi,
        h,
        strides,
        node_count,
        interior,
        interior_nodes,
        radii,
        stencils,
    }))
}

fn decode(
    idx: usize,
    dim: usize,
    _n: usize,
    strides: &[usize; MAX_DIM],
    lo: f64,
    h: f64,
    out: &mut [f64; MAX_DIM],
) {
    let mut rem = idx;
    for d in 0..dim {
        let i_d = rem / strides[d];
        rem %= strides[d];
        out[d] = lo + h * i_d as f64;
    }
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }
    pub fn lo(&self) -> f64 {
        self.lo
    }
    pub fn hi(&self) -> f64 {
        self.hi
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn node_count(&self) -> usize {
        self.node_count
    }
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }
    pub fn is_interior(&self, idx: usize) -> bool {
        self.interior[idx]
    }
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }
    pub fn interior_count(&self) -> usize {
        self.interior_nodes.len()
    }
    /// |x| of every node, indexed by linear node index.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }
    pub fn stencil(&self, idx: usize, axis: usize) -> StencilKind {
        match self.stencils[idx * self.dim + axis] {
            1 => StencilKind::Central,
            2 => StencilKind::Forward,
            3 => StencilKind::Backward,
            _ => StencilKind::None,
        }
    }

    /// Coordinates of a node by linear index (row-major, last axis fastest).
    pub fn node_coord(&self, idx: usize) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        decode(idx, self.dim, self.n, &self.strides, self.lo, self.h, &mut out);
        out
    }

    pub fn node_multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0usize; MAX_DIM];
        let mut rem = idx;
        for d in 0..self.dim {
            out[d] = rem / self.strides[d];
            rem %= self.strides[d];
        }
        out
    }

    /// True when two grids are interchangeable for field arithmetic.
    pub fn same_layout(&self, other: &GridSpec) -> bool {
        self.dim == other.dim && self.n == other.n && self.lo == other.lo && self.hi == other.hi
    }
}

// ------------------------- scalar fields -------------------------

/// Real values sampled at every grid node.
///
/// Fields representing W_0^{1,T} functions keep the Dirichlet-zero contract:
/// zero at all non-interior nodes. Constructors suffixed `_dirichlet` enforce
/// it; the plain ones sample everywhere (used by exponent/weight fields and
/// by accuracy tests that disable boundary zeroing).
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<GridSpec>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<GridSpec>) -> Self {
        ScalarField { grid: grid.clone(), values: vec![0.0; grid.node_count()] }
    }

    pub fn from_fn(grid: &Arc<GridSpec>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.node_count()];
        for (idx, v) in values.iter_mut().enumerate() {
            let c = grid.node_coord(idx);
            *v = f(&c[..grid.dim()]);
        }
        ScalarField { grid: grid.clone(), values }
    }

    pub fn from_fn_dirichlet(grid: &Arc<GridSpec>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut field = Self::from_fn(grid, f);
        field.zero_non_interior();
        field
    }

    pub fn sample_expr(grid: &Arc<GridSpec>, e: &Expr) -> Result<Self, EvalError> {
        let mut values = vec![0.0; grid.node_count()];
        for (idx, v) in values.iter_mut().enumerate() {
            let c = grid.node_coord(idx);
            *v = e.eval(&c[..grid.dim()])?;
        }
        Ok(ScalarField { grid: grid.clone(), values })
    }

    pub fn sample_expr_dirichlet(grid: &Arc<GridSpec>, e: &Expr) -> Result<Self, EvalError> {
        let mut field = Self::sample_expr(grid, e)?;
        field.zero_non_interior();
        Ok(field)
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn zero_non_interior(&mut self) {
        for (idx, v) in self.values.iter_mut().enumerate() {
            if !self.grid.interior[idx] {
                *v = 0.0;
            }
        }
    }

    pub fn clamp_non_negative(&mut self) {
        for v in &mut self.values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn abs_in_place(&mut self) {
        for v in &mut self.values {
            *v = v.abs();
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// self += c * other
    pub fn add_scaled(&mut self, c: f64, other: &ScalarField) {
        debug_assert!(self.grid.same_layout(&other.grid));
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += c * w;
        }
    }

    pub fn max_abs_interior(&self) -> f64 {
        let mut m = 0.0f64;
        for &idx in &self.grid.interior_nodes {
            m = m.max(self.values[idx].abs());
        }
        m
    }

    pub fn is_zero_interior(&self) -> bool {
        self.grid.interior_nodes.iter().all(|&idx| self.values[idx] == 0.0)
    }

    /// CSV export: header `i1,..,iN,x1,..,xN,value`, one row per node in
    /// row-major node order (last axis fastest).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let dim = self.grid.dim();
        let mut header = String::new();
        for d in 0..dim {
            header.push_str(&format!("i{},", d + 1));
        }
        for d in 0..dim {
            header.push_str(&format!("x{},", d + 1));
        }
        header.push_str("value");
        writeln!(w, "{header}")?;
        for idx in 0..self.grid.node_count() {
            let mi = self.grid.node_multi_index(idx);
            let c = self.grid.node_coord(idx);
            let mut row = String::new();
            for d in 0..dim {
                row.push_str(&format!("{},", mi[d]));
            }
            for d in 0..dim {
                row.push_str(&format!("{:?},", c[d]));
            }
            row.push_str(&format!("{:?}", self.values[idx]));
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

// ------------------------- gradient and quadrature -------------------------

/// Discrete gradient: N components per node, node-major layout.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<GridSpec>,
    data: Vec<f64>,
}

impl VectorField {
    pub fn component(&self, idx: usize, axis: usize) -> f64 {
        self.data[idx * self.grid.dim() + axis]
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    /// Pointwise Euclidean magnitude |∇u| as a scalar field.
    pub fn magnitude(&self) -> ScalarField {
        let dim = self.grid.dim();
        let mut out = ScalarField::zeros(&self.grid);
        for idx in 0..self.grid.node_count() {
            let mut s = 0.0;
            for a in 0..dim {
                let c = self.data[idx * dim + a];
                s += c * c;
            }
            out.values_mut()[idx] = s.sqrt();
        }
        out
    }
}

/// Central differences at interior nodes, one-sided where an axis neighbor is
/// non-interior, zero vector at non-interior nodes. Only interior values of
/// `u` are ever read, which is what enforces the discrete Dirichlet contract.
pub fn gradient(u: &ScalarField) -> VectorField {
    let grid = u.grid().clone();
    let dim = grid.dim();
    let h = grid.spacing();
    let v = u.values();
    let mut data = vec![0.0; grid.node_count() * dim];
    for &idx in grid.interior_nodes() {
        for a in 0..dim {
            let s = grid.stride(a);
            data[idx * dim + a] = match grid.stencil(idx, a) {
                StencilKind::Central => (v[idx + s] - v[idx - s]) / (2.0 * h),
                StencilKind::Forward => (v[idx + s] - v[idx]) / h,
                StencilKind::Backward => (v[idx] - v[idx - s]) / h,
                StencilKind::None => 0.0,
            };
        }
    }
    VectorField { grid, data }
}

/// Node quadrature: sum of values over interior nodes times the cell volume.
/// Fixed ascending-node summation order (deterministic).
pub fn integrate(f: &ScalarField) -> f64 {
    let grid = f.grid();
    let mut acc = 0.0;
    for &idx in grid.interior_nodes() {
        acc += f.values()[idx];
    }
    acc * grid.cell_volume()
}

/// L2-style discrete inner product over interior nodes, weighted by cell
/// volume. This is the pairing that makes `energy_gradient` the exact Gateaux
/// derivative of the discrete energy.
pub fn inner_product(a: &ScalarField, b: &ScalarField) -> f64 {
    let grid = a.grid();
    debug_assert!(grid.same_layout(b.grid()));
    let mut acc = 0.0;
    for &idx in grid.interior_nodes() {
        acc += a.values()[idx] * b.values()[idx];
    }
    acc * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn whole_box() -> Expr {
        parse("1").unwrap()
    }

    #[test]
    fn one_dimensional_minimal_grid_has_single_interior_node() {
        let g = build_grid(1, 3, 0.0, 1.0, &whole_box()).unwrap();
        assert_eq!(g.interior_count(), 1);
        let idx = g.interior_nodes()[0];
        assert_eq!(g.node_coord(idx)[0], 0.5);
    }

    #[test]
    fn ball_interior_count_matches_direct_enumeration() {
        // independent oracle: re-enumerate nodes with plain loops
        let dom = parse("chi_ball(0,0,0,1)").unwrap();
        let n = 17;
        let g = build_grid(3, n, -1.0, 1.0, &dom).unwrap();
        let h = 2.0 / (n - 1) as f64;
        let inside = |i: usize, j: usize, k: usize| -> bool {
            let x = -1.0 + h * i as f64;
            let y = -1.0 + h * j as f64;
            let z = -1.0 + h * k as f64;
            x * x + y * y + z * z <= 1.0
        };
        let mut count = 0;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                for k in 1..n - 1 {
                    if inside(i, j, k)
                        && inside(i - 1, j, k)
                        && inside(i + 1, j, k)
                        && inside(i, j - 1, k)
                        && inside(i, j + 1, k)
                        && inside(i, j, k - 1)
                        && inside(i, j, k + 1)
                    {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(g.interior_count(), count);
        assert!(count > 0);
    }

    #[test]
    fn empty_predicate_is_rejected() {
        let zero = parse("0").unwrap();
        assert!(matches!(build_grid(2, 5, 0.0, 1.0, &zero), Err(GridError::EmptyDomain)));
    }

    #[test]
    fn gradient_of_zero_field_is_zero() {
        let g = build_grid(2, 9, 0.0, 1.0, &whole_box()).unwrap();
        let u = ScalarField::zeros(&g);
        let d = gradient(&u);
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_linear_field_is_exact_in_deep_interior() {
        // boundary zeroing deliberately disabled: sample x1 everywhere
        let g = build_grid(3, 11, -1.0, 1.0, &whole_box()).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0]);
        let d = gradient(&u);
        for &idx in g.interior_nodes() {
            let deep = (0..3).all(|a| g.stencil(idx, a) == StencilKind::Central);
            if deep {
                assert!((d.component(idx, 0) - 1.0).abs() < 1e-12);
                assert!(d.component(idx, 1).abs() < 1e-12);
                assert!(d.component(idx, 2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_of_quadratic_matches_analytic_derivative() {
        let g = build_grid(1, 101, 0.0, 1.0, &whole_box()).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0] * x[0]);
        let d = gradient(&u);
        // node at x = 0.5
        let idx = 50;
        assert_eq!(g.node_coord(idx)[0], 0.5);
        assert!((d.component(idx, 0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn integrate_constant_approximates_measure() {
        for dim in 1..=3usize {
            let n = 21;
            let g = build_grid(dim, n, 0.0, 1.0, &whole_box()).unwrap();
            let f = ScalarField::from_fn(&g, |_| 1.0);
            let h = g.spacing();
            let err = (integrate(&f) - 1.0).abs();
            assert!(err <= 3.0 * dim as f64 * h, "dim {dim}: err {err}");
        }
    }

    #[test]
    fn integrate_zero_is_exact_and_linear_coordinate_close() {
        let g = build_grid(1, 101, 0.0, 1.0, &whole_box()).unwrap();
        assert_eq!(integrate(&ScalarField::zeros(&g)), 0.0);
        let f = ScalarField::from_fn(&g, |x| x[0]);
        assert!((integrate(&f) - 0.5).abs() < 1e-2);
    }

    #[test]
    fn integrate_is_linear_to_machine_precision() {
        let g = build_grid(2, 17, -1.0, 1.0, &whole_box()).unwrap();
        let f = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() + x[1]);
        let gfield = ScalarField::from_fn(&g, |x| x[0] * x[1] - 0.25);
        let (a, b) = (2.5f64, -1.25f64);
        let mut comb = f.scaled(a);
        comb.add_scaled(b, &gfield);
        let lhs = integrate(&comb);
        let rhs = a * integrate(&f) + b * integrate(&gfield);
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn gradient_constant_region_is_zero() {
        let g = build_grid(2, 15, 0.0, 1.0, &whole_box()).unwrap();
        let u = ScalarField::from_fn(&g, |_| 4.25);
        let d = gradient(&u);
        for &idx in g.interior_nodes() {
            let full = (0..2).all(|a| g.stencil(idx, a) == StencilKind::Central);
            if full {
                assert_eq!(d.component(idx, 0), 0.0);
                assert_eq!(d.component(idx, 1), 0.0);
            }
        }
    }

    #[test]
    fn refinement_shrinks_quadrature_error() {
        let dom = whole_box();
        let exact = 1.0 - (1.0f64).cos(); // integral of sin on [0,1]
        let mut prev = f64::INFINITY;
        for n in [11usize, 21, 41] {
            let g = build_grid(1, n, 0.0, 1.0, &dom).unwrap();
            let f = ScalarField::from_fn(&g, |x| x[0].sin());
            let err = (integrate(&f) - exact).abs();
            assert!(err < prev, "n {n}: err {err} prev {prev}");
            prev = err;
        }
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let g = build_grid(2, 3, 0.0, 1.0, &whole_box()).unwrap();
        let u = ScalarField::from_fn_dirichlet(&g, |_| 7.0);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i1,i2,x1,x2,value");
        assert_eq!(lines.len(), 1 + 9);
        // row-major: second row is node (0,1) at x=(0,0.5), non-interior so 0
        assert_eq!(lines[2], "0,1,0.0,0.5,0.0");
        // the single interior node carries the value
        assert_eq!(lines[5], "1,1,0.5,0.5,7.0");
    }
}
