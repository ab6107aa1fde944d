//! Structured maximal monotone operators `A = F + H` on `R^d`.
//!
//! `F` is the single-valued smooth part (affine map, coordinatewise odd
//! polynomial, radial cubic `c‖x‖²x`) and `H` is the normal cone of a box or a
//! ball. Every part has closed-form derivatives of all orders, so resolvents,
//! Taylor surrogates and brute-force oracles can all be evaluated.

mod enlargement;
mod resolvent;
mod taylor;

pub use enlargement::{
    eps_enlargement_check, eps_enlargement_check_with, sample_graph_points, EnlargementVerdict,
};
pub use resolvent::{resolvent, resolvent_with, ResolventOptions, ResolventResult};
pub use taylor::{taylor_surrogate, TaylorSurrogate};

pub(crate) use resolvent::solve_inclusion;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Tolerance on the smallest eigenvalue of `(M + Mᵀ)/2`.
pub const MONOTONICITY_TOL: f64 = 1e-10;

/// Relative tolerance used to decide whether a point sits on the boundary of
/// the domain.
const BOUNDARY_TOL: f64 = 1e-12;

/// Tolerance for accepting points marginally outside the domain.
pub const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AffinePart {
    pub matrix: Matrix,
    pub offset: Vector,
}

/// Normal cone of a closed convex set; the set is the operator domain.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalCone {
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
}

/// Scalar polynomial `Σ cᵢ tⁱ` (ascending coefficients) applied to every
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly1d {
    coeffs: Vec<f64>,
}

/// `F(x) = scale · ‖x‖² x`, the gradient of `scale/4 · ‖x‖⁴`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCubic {
    pub scale: f64,
}

/// `F ∈ G_L^p`: the `(p−1)`th derivative of `F` is `L`-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    pub order: usize,
    pub lipschitz: f64,
}

/// Immutable operator description. Build with [`OperatorSpec::builder`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    dim: usize,
    affine: Option<AffinePart>,
    normal_cone: Option<NormalCone>,
    poly1d: Option<Poly1d>,
    radial_cubic: Option<RadialCubic>,
    smoothness: Smoothness,
}

#[derive(Debug, Clone)]
pub struct OperatorBuilder {
    dim: usize,
    affine: Option<AffinePart>,
    normal_cone: Option<NormalCone>,
    poly1d: Option<Poly1d>,
    radial_cubic: Option<RadialCubic>,
    smoothness: Smoothness,
}

impl OperatorBuilder {
    pub fn affine(mut self, matrix: Matrix, offset: Vector) -> Self {
        self.affine = Some(AffinePart { matrix, offset });
        self
    }

    pub fn box_domain(mut self, lower: Vector, upper: Vector) -> Self {
        self.normal_cone = Some(NormalCone::Box { lower, upper });
        self
    }

    pub fn ball_domain(mut self, center: Vector, radius: f64) -> Self {
        self.normal_cone = Some(NormalCone::Ball { center, radius });
        self
    }

    pub fn poly1d(mut self, coeffs: Vec<f64>) -> Self {
        self.poly1d = Some(Poly1d { coeffs });
        self
    }

    pub fn radial_cubic(mut self, scale: f64) -> Self {
        self.radial_cubic = Some(RadialCubic { scale });
        self
    }

    pub fn smoothness(mut self, order: usize, lipschitz: f64) -> Self {
        self.smoothness = Smoothness { order, lipschitz };
        self
    }

    pub fn build(self) -> Result<OperatorSpec> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::InvalidOperator("dimension must be positive".into()));
        }
        if self.affine.is_none()
            && self.normal_cone.is_none()
            && self.poly1d.is_none()
            && self.radial_cubic.is_none()
        {
            return Err(Error::InvalidOperator("operator has no parts".into()));
        }
        if self.smoothness.order == 0 {
            return Err(Error::InvalidOperator("smoothness order must be >= 1".into()));
        }
        if !(self.smoothness.lipschitz >= 0.0 && self.smoothness.lipschitz.is_finite()) {
            return Err(Error::InvalidOperator("Lipschitz constant must be finite and >= 0".into()));
        }
        if let Some(aff) = &self.affine {
            if aff.matrix.nrows() != d || aff.matrix.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: aff.matrix.nrows() });
            }
            if aff.offset.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: aff.offset.len() });
            }
            if aff.matrix.iter().chain(aff.offset.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidOperator("affine part has non-finite entries".into()));
            }
            let sym = (&aff.matrix + aff.matrix.transpose()) * 0.5;
            let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
            if min_eig < -MONOTONICITY_TOL {
                return Err(Error::NonMonotone(format!(
                    "symmetric part of M has eigenvalue {min_eig:e}"
                )));
            }
        }
        if let Some(poly) = &self.poly1d {
            poly.validate()?;
        }
        if let Some(rc) = &self.radial_cubic {
            if !(rc.scale >= 0.0 && rc.scale.is_finite()) {
                return Err(Error::NonMonotone("radial cubic scale must be >= 0".into()));
            }
        }
        match &self.normal_cone {
            Some(NormalCone::Box { lower, upper }) => {
                if lower.len() != d || upper.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: lower.len() });
                }
                for (l, u) in lower.iter().zip(upper.iter()) {
                    if !(l.is_finite() && u.is_finite() && l <= u) {
                        return Err(Error::InvalidOperator(format!("bad box bounds [{l}, {u}]")));
                    }
                }
            }
            Some(NormalCone::Ball { center, radius }) => {
                if center.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: center.len() });
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidOperator("ball radius must be positive".into()));
                }
            }
            None => {}
        }
        Ok(OperatorSpec {
            dim: d,
            affine: self.affine,
            normal_cone: self.normal_cone,
            poly1d: self.poly1d,
            radial_cubic: self.radial_cubic,
            smoothness: self.smoothness,
        })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Poly1d {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Index of the highest nonzero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() || self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidOperator("polynomial needs finite coefficients".into()));
        }
        let n = self.degree();
        if n >= 2 && n.is_multiple_of(2) {
            return Err(Error::NonMonotone(format!("polynomial has even degree {n}")));
        }
        if n >= 1 && self.coeffs[n] < 0.0 {
            return Err(Error::NonMonotone("polynomial has negative leading coefficient".into()));
        }
        if n >= 3 {
            // min of p' is attained at a root of p'', all of which lie inside
            // the Cauchy bound of p''.
            let second: Vec<f64> = (2..=n)
                .map(|m| self.coeffs[m] * (m * (m - 1)) as f64)
                .collect();
            let lead = *second.last().unwrap();
            let bound = 1.0
                + second[..second.len() - 1]
                    .iter()
                    .map(|c| (c / lead).abs())
                    .fold(0.0, f64::max);
            let samples = 4001;
            let scale = self.coeffs.iter().map(|c| c.abs()).fold(1.0, f64::max);
            for i in 0..samples {
                let t = -bound + 2.0 * bound * i as f64 / (samples - 1) as f64;
                let slope = self.derivative(t, 1);
                if slope < -1e-10 * scale {
                    return Err(Error::NonMonotone(format!(
                        "polynomial derivative is {slope:e} at {t}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// `j`th derivative at `t`.
    pub fn derivative(&self, t: f64, j: usize) -> f64 {
        let fact: f64 = (1..=j).map(|i| i as f64).product();
        fact * self.taylor_coeff(t, j)
    }

    /// `p^{(j)}(a) / j!`.
    pub fn taylor_coeff(&self, a: f64, j: usize) -> f64 {
        let mut acc = 0.0;
        for m in (j..self.coeffs.len()).rev() {
            acc = acc * a + binomial(m, j) * self.coeffs[m];
        }
        acc
    }
}

impl NormalCone {
    pub fn project(&self, x: &Vector) -> Vector {
        match self {
            NormalCone::Box { lower, upper } => {
                Vector::from_fn(x.len(), |i, _| x[i].clamp(lower[i], upper[i]))
            }
            NormalCone::Ball { center, radius } => {
                let diff = x - center;
                let n = diff.norm();
                if n <= *radius {
                    x.clone()
                } else {
                    center + diff * (*radius / n)
                }
            }
        }
    }

    /// Element of the generalized Jacobian of the projection at `w`.
    pub fn projection_jacobian(&self, w: &Vector) -> Matrix {
        let d = w.len();
        match self {
            NormalCone::Box { lower, upper } => Matrix::from_diagonal(&Vector::from_fn(d, |i, _| {
                if w[i] > lower[i] && w[i] < upper[i] {
                    1.0
                } else {
                    0.0
                }
            })),
            NormalCone::Ball { center, radius } => {
                let diff = w - center;
                let n = diff.norm();
                if n <= *radius {
                    Matrix::identity(d, d)
                } else {
                    let u = diff / n;
                    (Matrix::identity(d, d) - &u * u.transpose()) * (*radius / n)
                }
            }
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            NormalCone::Box { lower, upper } => (0..x.len()).all(|i| {
                let slack = tol * lower[i].abs().max(upper[i].abs()).max(1.0);
                x[i] >= lower[i] - slack && x[i] <= upper[i] + slack
            }),
            NormalCone::Ball { center, radius } => (x - center).norm() <= radius * (1.0 + tol),
        }
    }

    /// `w + n*` where `n*` minimizes `‖w + n‖` over `n ∈ N(x)`; `None` when `x`
    /// is outside the set.
    pub fn min_norm_shift(&self, x: &Vector, w: &Vector) -> Option<Vector> {
        if !self.contains(x, BOUNDARY_TOL) {
            return None;
        }
        match self {
            NormalCone::Box { lower, upper } => {
                let mut out = w.clone();
                for i in 0..x.len() {
                    let slack = BOUNDARY_TOL * lower[i].abs().max(upper[i].abs()).max(1.0);
                    let at_lower = x[i] <= lower[i] + slack;
                    let at_upper = x[i] >= upper[i] - slack;
                    out[i] = match (at_lower, at_upper) {
                        // degenerate interval: the cone is the whole line
                        (true, true) => 0.0,
                        // n ≤ 0 allowed: only a negative component survives
                        (true, false) => w[i].min(0.0),
                        // n ≥ 0 allowed: only a positive component survives
                        (false, true) => w[i].max(0.0),
                        (false, false) => w[i],
                    };
                }
                Some(out)
            }
            NormalCone::Ball { center, radius } => {
                let diff = x - center;
                let n = diff.norm();
                if n < radius * (1.0 - BOUNDARY_TOL) {
                    return Some(w.clone());
                }
                let u = diff / n;
                let alpha = (-w.dot(&u)).max(0.0);
                Some(w + u * alpha)
            }
        }
    }

    /// Point of `g + N(y)` closest to `t`, for `y` in the set.
    ///
    /// Box coordinates are decided independently; an active coordinate whose
    /// sign allows it takes `t_i` exactly, so no `g_i − g_i` cancellation enters.
    pub fn closest_in_shifted_cone(&self, y: &Vector, g: &Vector, t: &Vector) -> Vector {
        match self {
            NormalCone::Box { lower, upper } => Vector::from_fn(y.len(), |i, _| {
                let n = t[i] - g[i];
                let fits = match (y[i] <= lower[i], y[i] >= upper[i]) {
                    (true, true) => true,
                    (true, false) => n <= 0.0,
                    (false, true) => n >= 0.0,
                    (false, false) => false,
                };
                if fits {
                    t[i]
                } else {
                    g[i]
                }
            }),
            NormalCone::Ball { center, radius } => {
                let diff = y - center;
                let n = diff.norm();
                if n < radius * (1.0 - BOUNDARY_TOL) {
                    return g.clone();
                }
                let e = diff / n;
                let alpha = (t - g).dot(&e).max(0.0);
                g + e * alpha
            }
        }
    }

    pub fn sample_interior<R: Rng>(&self, rng: &mut R) -> Vector {
        match self {
            NormalCone::Box { lower, upper } => Vector::from_fn(lower.len(), |i, _| {
                if lower[i] < upper[i] {
                    rng.gen_range(lower[i]..=upper[i])
                } else {
                    lower[i]
                }
            }),
            NormalCone::Ball { center, radius } => {
                let d = center.len();
                loop {
                    let z = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..=1.0));
                    if z.norm() <= 1.0 {
                        return center + z * *radius;
                    }
                }
            }
        }
    }

    /// Point drawn from an enlarged copy of the set (used to generate
    /// boundary points together with normal directions).
    pub fn sample_enlarged<R: Rng>(&self, rng: &mut R, factor: f64) -> Vector {
        match self {
            NormalCone::Box { lower, upper } => Vector::from_fn(lower.len(), |i, _| {
                let mid = 0.5 * (lower[i] + upper[i]);
                let half = 0.5 * (upper[i] - lower[i]) * factor;
                if half > 0.0 {
                    rng.gen_range(mid - half..=mid + half)
                } else {
                    mid
                }
            }),
            NormalCone::Ball { center, radius } => {
                let d = center.len();
                loop {
                    let z = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..=1.0));
                    if z.norm() <= 1.0 {
                        return center + z * (*radius * factor);
                    }
                }
            }
        }
    }
}

impl OperatorSpec {
    pub fn builder(dim: usize) -> OperatorBuilder {
        OperatorBuilder {
            dim,
            affine: None,
            normal_cone: None,
            poly1d: None,
            radial_cubic: None,
            smoothness: Smoothness { order: 2, lipschitz: 0.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn affine(&self) -> Option<&AffinePart> {
        self.affine.as_ref()
    }

    pub fn normal_cone(&self) -> Option<&NormalCone> {
        self.normal_cone.as_ref()
    }

    pub fn poly1d(&self) -> Option<&Poly1d> {
        self.poly1d.as_ref()
    }

    pub fn radial_cubic(&self) -> Option<RadialCubic> {
        self.radial_cubic
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// True when `F` has a nonzero contribution beyond the normal cone.
    pub fn has_single_valued(&self) -> bool {
        self.affine.is_some() || self.poly1d.is_some() || self.radial_cubic.is_some()
    }

    /// True when the single-valued part is affine (or absent).
    pub fn is_affine(&self) -> bool {
        self.poly1d.is_none() && self.radial_cubic.is_none()
    }

    pub fn domain_bounded(&self) -> bool {
        self.normal_cone.is_some()
    }

    pub(crate) fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// `F(x)`, the single-valued part only (the normal cone is excluded).
    pub fn eval_single_valued(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &Vector) -> Vector {
        let mut out = match &self.affine {
            Some(aff) => &aff.matrix * x + &aff.offset,
            None => Vector::zeros(self.dim),
        };
        if let Some(poly) = &self.poly1d {
            for i in 0..self.dim {
                out[i] += poly.eval(x[i]);
            }
        }
        if let Some(rc) = &self.radial_cubic {
            out += x * (rc.scale * x.norm_squared());
        }
        out
    }

    /// `DF(x)`.
    pub fn jacobian(&self, x: &Vector) -> Matrix {
        let d = self.dim;
        let mut jac = match &self.affine {
            Some(aff) => aff.matrix.clone(),
            None => Matrix::zeros(d, d),
        };
        if let Some(poly) = &self.poly1d {
            for i in 0..d {
                jac[(i, i)] += poly.derivative(x[i], 1);
            }
        }
        if let Some(rc) = &self.radial_cubic {
            jac += (Matrix::identity(d, d) * x.norm_squared() + x * x.transpose() * 2.0) * rc.scale;
        }
        jac
    }

    /// Highest `j` with a nonzero `D^{(j)}F` in general position.
    pub fn max_taylor_order(&self) -> usize {
        let mut order = if self.affine.is_some() { 1 } else { 0 };
        if let Some(poly) = &self.poly1d {
            order = order.max(poly.degree());
        }
        if self.radial_cubic.is_some() {
            order = order.max(3);
        }
        order
    }

    /// `(1/j!) D^{(j)}F(anchor)[h]^j`.
    pub fn taylor_term(&self, anchor: &Vector, h: &Vector, j: usize) -> Vector {
        let d = self.dim;
        let mut out = Vector::zeros(d);
        if let Some(aff) = &self.affine {
            match j {
                0 => out += &aff.matrix * anchor + &aff.offset,
                1 => out += &aff.matrix * h,
                _ => {}
            }
        }
        if let Some(poly) = &self.poly1d {
            for i in 0..d {
                out[i] += poly.taylor_coeff(anchor[i], j) * h[i].powi(j as i32);
            }
        }
        if let Some(rc) = &self.radial_cubic {
            let c = rc.scale;
            let a2 = anchor.norm_squared();
            let ah = anchor.dot(h);
            let h2 = h.norm_squared();
            match j {
                0 => out += anchor * (c * a2),
                1 => out += (h * a2 + anchor * (2.0 * ah)) * c,
                2 => out += (h * (2.0 * ah) + anchor * h2) * c,
                3 => out += h * (c * h2),
                _ => {}
            }
        }
        out
    }

    /// Derivative with respect to `h` of [`Self::taylor_term`].
    pub fn taylor_term_jacobian(&self, anchor: &Vector, h: &Vector, j: usize) -> Matrix {
        let d = self.dim;
        let mut out = Matrix::zeros(d, d);
        if j == 0 {
            return out;
        }
        if let Some(aff) = &self.affine {
            if j == 1 {
                out += &aff.matrix;
            }
        }
        if let Some(poly) = &self.poly1d {
            for i in 0..d {
                out[(i, i)] +=
                    j as f64 * poly.taylor_coeff(anchor[i], j) * h[i].powi(j as i32 - 1);
            }
        }
        if let Some(rc) = &self.radial_cubic {
            let c = rc.scale;
            let eye = Matrix::identity(d, d);
            match j {
                1 => out += (eye * anchor.norm_squared() + anchor * anchor.transpose() * 2.0) * c,
                2 => {
                    out += (h * anchor.transpose() * 2.0
                        + eye * (2.0 * anchor.dot(h))
                        + anchor * h.transpose() * 2.0)
                        * c
                }
                3 => out += (eye * h.norm_squared() + h * h.transpose() * 2.0) * c,
                _ => {}
            }
        }
        out
    }

    /// Euclidean projection onto `dom(A)`; identity on `R^d`.
    pub fn project_domain(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        Ok(match &self.normal_cone {
            Some(cone) => cone.project(x),
            None => x.clone(),
        })
    }

    pub fn in_domain(&self, x: &Vector, tol: f64) -> bool {
        match &self.normal_cone {
            Some(cone) => cone.contains(x, tol),
            None => true,
        }
    }

    /// `min_{n ∈ N(x)} ‖w + n‖` realized as the shifted vector; `None` off the domain.
    pub fn min_norm_shift(&self, x: &Vector, w: &Vector) -> Option<Vector> {
        match &self.normal_cone {
            Some(cone) => cone.min_norm_shift(x, w),
            None => Some(w.clone()),
        }
    }

    /// `res(x) = inf_{ξ ∈ Ax} ‖ξ‖`, or `None` when `Ax` is empty.
    pub fn residue(&self, x: &Vector) -> Result<Option<f64>> {
        self.check_dim(x)?;
        let fx = self.eval_unchecked(x);
        Ok(self.min_norm_shift(x, &fx).map(|v| v.norm()))
    }

    /// Distance from `v` to `Ay` (`+∞` when `y` is outside the domain).
    pub fn membership_defect(&self, y: &Vector, v: &Vector) -> Result<f64> {
        self.check_dim(y)?;
        self.check_dim(v)?;
        let w = self.eval_unchecked(y) - v;
        Ok(self.min_norm_shift(y, &w).map_or(f64::INFINITY, |s| s.norm()))
    }

    /// Random point of `dom(A)`; on `R^d` drawn from the cube of half-width
    /// `spread` around `center`.
    pub fn sample_domain<R: Rng>(&self, rng: &mut R, center: &Vector, spread: f64) -> Vector {
        match &self.normal_cone {
            Some(cone) => cone.sample_interior(rng),
            None => Vector::from_fn(self.dim, |i, _| center[i] + rng.gen_range(-spread..=spread)),
        }
    }

    /// Random point of the graph: `(x̃, ṽ)` with `ṽ ∈ A x̃`, including points on
    /// the boundary paired with nonzero normal-cone elements.
    pub fn sample_graph_point<R: Rng>(
        &self,
        rng: &mut R,
        center: &Vector,
        spread: f64,
    ) -> (Vector, Vector) {
        match &self.normal_cone {
            Some(cone) => {
                let w = cone.sample_enlarged(rng, 1.5);
                let xt = cone.project(&w);
                let normal = (&w - &xt) * rng.gen_range(0.0..=4.0);
                let vt = self.eval_unchecked(&xt) + normal;
                (xt, vt)
            }
            None => {
                let xt = self.sample_domain(rng, center, spread);
                let vt = self.eval_unchecked(&xt);
                (xt, vt)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn shifted_cone_point_on_a_box() {
        let cone = NormalCone::Box { lower: v(&[-1.0, -1.0, -1.0]), upper: v(&[1.0, 1.0, 1.0]) };
        let y = v(&[1.0, -1.0, 0.2]);
        let g = v(&[0.5, 0.5, 0.5]);
        // upper face allows t ≥ g, lower face t ≤ g, interior keeps g
        assert_eq!(cone.closest_in_shifted_cone(&y, &g, &v(&[3.0, -2.0, 9.0])), v(&[3.0, -2.0, 0.5]));
        assert_eq!(cone.closest_in_shifted_cone(&y, &g, &v(&[0.1, 0.9, 9.0])), v(&[0.5, 0.5, 0.5]));
    }

    #[test]
    fn shifted_cone_point_on_a_ball() {
        let cone = NormalCone::Ball { center: v(&[0.0, 0.0]), radius: 2.0 };
        let y = v(&[2.0, 0.0]);
        let g = v(&[-1.0, 1.0]);
        let u = cone.closest_in_shifted_cone(&y, &g, &v(&[3.0, 5.0]));
        assert_eq!(u, v(&[3.0, 1.0]));
        assert_eq!(cone.closest_in_shifted_cone(&v(&[0.5, 0.0]), &g, &v(&[3.0, 5.0])), g);
    }

    #[test]
    fn evaluate_identity_map() {
        let op = OperatorSpec::builder(2)
            .affine(Matrix::identity(2, 2), Vector::zeros(2))
            .build()
            .unwrap();
        assert_eq!(op.eval_single_valued(&v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));
    }

    #[test]
    fn evaluate_skew_rotation() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let op = OperatorSpec::builder(2).affine(m, Vector::zeros(2)).build().unwrap();
        assert_eq!(op.eval_single_valued(&v(&[1.0, 0.0])).unwrap(), v(&[0.0, -1.0]));
    }

    #[test]
    fn evaluate_cubic() {
        let op = OperatorSpec::builder(1).poly1d(vec![0.0, 0.0, 0.0, 1.0]).build().unwrap();
        assert_eq!(op.eval_single_valued(&v(&[2.0])).unwrap(), v(&[8.0]));
    }

    #[test]
    fn evaluate_rejects_wrong_dimension() {
        let op = OperatorSpec::builder(2)
            .affine(Matrix::identity(2, 2), Vector::zeros(2))
            .build()
            .unwrap();
        assert!(matches!(
            op.eval_single_valued(&v(&[1.0])),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn rejects_non_monotone_parts() {
        let m = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            OperatorSpec::builder(2).affine(m, Vector::zeros(2)).build(),
            Err(Error::NonMonotone(_))
        ));
        assert!(matches!(
            OperatorSpec::builder(1).poly1d(vec![0.0, 0.0, 1.0]).build(),
            Err(Error::NonMonotone(_))
        ));
        assert!(matches!(
            OperatorSpec::builder(1).poly1d(vec![0.0, 0.0, 0.0, -1.0]).build(),
            Err(Error::NonMonotone(_))
        ));
        // u³ − 3u has negative slope near the origin
        assert!(matches!(
            OperatorSpec::builder(1).poly1d(vec![0.0, -3.0, 0.0, 1.0]).build(),
            Err(Error::NonMonotone(_))
        ));
        assert!(OperatorSpec::builder(1).poly1d(vec![0.0, 3.0, 0.0, 1.0]).build().is_ok());
        assert!(matches!(
            OperatorSpec::builder(2).build(),
            Err(Error::InvalidOperator(_))
        ));
    }

    #[test]
    fn project_domain_examples() {
        let boxed = OperatorSpec::builder(2)
            .box_domain(v(&[-1.0, -1.0]), v(&[1.0, 1.0]))
            .build()
            .unwrap();
        assert_eq!(boxed.project_domain(&v(&[3.0, 0.0])).unwrap(), v(&[1.0, 0.0]));
        let ball = OperatorSpec::builder(2).ball_domain(Vector::zeros(2), 1.0).build().unwrap();
        assert_eq!(ball.project_domain(&v(&[0.0, 2.0])).unwrap(), v(&[0.0, 1.0]));
        let free = OperatorSpec::builder(2)
            .affine(Matrix::identity(2, 2), Vector::zeros(2))
            .build()
            .unwrap();
        assert_eq!(free.project_domain(&v(&[5.0, -7.0])).unwrap(), v(&[5.0, -7.0]));
    }

    #[test]
    fn poly_taylor_coefficients() {
        let p = Poly1d { coeffs: vec![0.0, 0.0, 0.0, 1.0] };
        // u³ around 1: 1 + 3h + 3h² + h³
        assert_eq!(p.taylor_coeff(1.0, 0), 1.0);
        assert_eq!(p.taylor_coeff(1.0, 1), 3.0);
        assert_eq!(p.taylor_coeff(1.0, 2), 3.0);
        assert_eq!(p.taylor_coeff(1.0, 3), 1.0);
        assert_eq!(p.taylor_coeff(1.0, 4), 0.0);
        assert_eq!(p.derivative(2.0, 2), 12.0);
    }

    #[test]
    fn box_residue_sign_constraints() {
        let op = OperatorSpec::builder(1)
            .affine(Matrix::zeros(1, 1), v(&[-3.0]))
            .box_domain(v(&[-1.0]), v(&[1.0]))
            .build()
            .unwrap();
        // F = −3 at the upper bound is cancelled by n = 3 ∈ N(1)
        assert_eq!(op.residue(&v(&[1.0])).unwrap(), Some(0.0));
        assert_eq!(op.residue(&v(&[0.0])).unwrap(), Some(3.0));
        assert_eq!(op.residue(&v(&[-1.0])).unwrap(), Some(3.0));
        assert_eq!(op.residue(&v(&[2.0])).unwrap(), None);
    }

    #[test]
    fn ball_residue_projects_onto_outward_ray() {
        let op = OperatorSpec::builder(2)
            .affine(Matrix::zeros(2, 2), v(&[-2.0, 1.0]))
            .ball_domain(Vector::zeros(2), 1.0)
            .build()
            .unwrap();
        // at (1, 0) the outward normal absorbs the −2 component
        let r = op.residue(&v(&[1.0, 0.0])).unwrap().unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = op.residue(&v(&[0.0, 0.0])).unwrap().unwrap();
        assert!((r - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn radial_cubic_taylor_terms_sum_to_value() {
        let op = OperatorSpec::builder(3).radial_cubic(1.5).build().unwrap();
        let a = v(&[0.3, -0.2, 0.7]);
        let h = v(&[-0.4, 0.5, 0.1]);
        let sum: Vector = (0..=3).map(|j| op.taylor_term(&a, &h, j)).sum();
        let direct = op.eval_single_valued(&(&a + &h)).unwrap();
        assert!((sum - direct).norm() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -2.0, 0.5]);
        let op = OperatorSpec::builder(2)
            .affine(m, v(&[0.1, 0.2]))
            .poly1d(vec![0.0, 1.0, 0.0, 2.0])
            .radial_cubic(0.7)
            .build()
            .unwrap();
        let x = v(&[0.4, -0.9]);
        let jac = op.jacobian(&x);
        let eps = 1e-6;
        for j in 0..2 {
            let mut e = Vector::zeros(2);
            e[j] = eps;
            let col = (op.eval_single_valued(&(&x + &e)).unwrap()
                - op.eval_single_valued(&(&x - &e)).unwrap())
                / (2.0 * eps);
            for i in 0..2 {
                assert!((jac[(i, j)] - col[i]).abs() < 1e-7, "entry ({i},{j})");
            }
        }
    }
}
