use super::{Matrix, NormalCone, OperatorSpec, Vector};
use crate::error::{Error, Result};

/// Output of `(I + λA)⁻¹x`: `y` and a certificate `v ∈ Ay` with `λv + y ≈ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventResult {
    pub y: Vector,
    pub v: Vector,
    pub lambda: f64,
    /// `‖λv + y − x‖`.
    pub residual: f64,
    /// Upper bound on `dist(v, Ay)`; zero when `v` is built inside `Ay`.
    pub membership_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventOptions {
    /// Relative tolerance on `‖λv + y − x‖ / max(1, ‖y − x‖)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        ResolventOptions { tol: 1e-10, max_iter: 100 }
    }
}

/// Smooth single-valued map with an explicit Jacobian.
pub(crate) trait SmoothModel {
    fn eval(&self, y: &Vector) -> Vector;
    fn jacobian(&self, y: &Vector) -> Matrix;
}

pub(crate) struct SingleValued<'a>(pub &'a OperatorSpec);

impl SmoothModel for SingleValued<'_> {
    fn eval(&self, y: &Vector) -> Vector {
        self.0.eval_unchecked(y)
    }

    fn jacobian(&self, y: &Vector) -> Matrix {
        self.0.jacobian(y)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InclusionSolve {
    pub y: Vector,
    /// `u ∈ (G + N)(y)`.
    pub u: Vector,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SingularJacobian {
    pub iterations: usize,
}

fn project(cone: Option<&NormalCone>, w: &Vector) -> Vector {
    match cone {
        Some(c) => c.project(w),
        None => w.clone(),
    }
}

/// Turns an approximate root `y` into an exact graph pair: with
/// `w = x − λG(y)` and `y* = P(w)`, `(w − y*)/λ` lies in `N(y*)`, so
/// `u = G(y*) + (w − y*)/λ ∈ (G + N)(y*)` and `‖λu + y* − x‖ = λ‖G(y*) − G(y)‖`.
fn finalize<M: SmoothModel + ?Sized>(
    model: &M,
    cone: Option<&NormalCone>,
    lambda: f64,
    x: &Vector,
    y: &Vector,
) -> (Vector, Vector, f64) {
    let gy = model.eval(y);
    let w = x - &gy * lambda;
    let ys = project(cone, &w);
    let gys = model.eval(&ys);
    let u = &gys + (&w - &ys) / lambda;
    let residual = (&u * lambda + &ys - x).norm();
    (ys, u, residual)
}

struct NormalMapSolve {
    w: Vector,
    y: Vector,
    merit: f64,
    iterations: usize,
}

/// Semismooth Newton on the normal map `H(w) = w + λG(P(w)) − x` of the
/// inclusion `0 ∈ y − x + λ(G + N)(y)`, with `y = P(w)`.
///
/// For monotone `G` the Jacobian `I + λ DG(P(w)) DP(w)` is nonsingular, and
/// `u = G(y) + (w − y)/λ` lies in `(G + N)(y)` by construction, so the merit
/// `‖H(w)‖ = ‖λu + y − x‖` is exactly the resolvent residual. Steps are
/// halved until the merit decreases.
fn newton_normal_map<M: SmoothModel + ?Sized>(
    model: &M,
    cone: Option<&NormalCone>,
    lambda: f64,
    x: &Vector,
    w0: Vector,
    max_iter: usize,
) -> std::result::Result<NormalMapSolve, SingularJacobian> {
    let d = x.len();
    let normal_map = |w: &Vector| -> (Vector, Vector) {
        let y = project(cone, w);
        let h = w + model.eval(&y) * lambda - x;
        (y, h)
    };
    let mut w = w0;
    let (mut y, mut h) = normal_map(&w);
    let mut merit = h.norm();
    let mut iterations = 0;
    while iterations < max_iter {
        let scale = x.norm().max(w.norm());
        if !(merit > 1e-15 * scale) {
            break;
        }
        iterations += 1;
        let dp = match cone {
            Some(c) => c.projection_jacobian(&w),
            None => Matrix::identity(d, d),
        };
        let jac = Matrix::identity(d, d) + model.jacobian(&y) * dp * lambda;
        let step = match jac.lu().solve(&(-&h)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Err(SingularJacobian { iterations }),
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &w + &step * t;
            let (ty, th) = normal_map(&trial);
            let tn = th.norm();
            if tn < merit {
                accepted = Some((trial, ty, th, tn));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((nw, ny, nh, nn)) => {
                w = nw;
                y = ny;
                h = nh;
                merit = nn;
            }
            // stagnation: floating-point floor or a kink of P
            None => break,
        }
    }
    Ok(NormalMapSolve { w, y, merit, iterations })
}

fn settled(s: &NormalMapSolve, x: &Vector) -> bool {
    s.merit <= 1e-12 * 1f64.max(x.norm()).max(s.w.norm())
}

/// Solves `0 ∈ y − x + λ(G + N)(y)` by normal-map Newton from `start`.
///
/// Newton on a piecewise-smooth map can stall at a kink when `λ` is large.
/// In that case the index is lowered until Newton from `x` succeeds and then
/// raised back geometrically, warm-starting each solve from the last one.
pub(crate) fn solve_inclusion<M: SmoothModel + ?Sized>(
    model: &M,
    cone: Option<&NormalCone>,
    lambda: f64,
    x: &Vector,
    start: &Vector,
    max_iter: usize,
) -> std::result::Result<InclusionSolve, SingularJacobian> {
    // An interior guess has `P(w) = w`, so the first step is the
    // unconstrained Newton step.
    let mut best = newton_normal_map(model, cone, lambda, x, start.clone(), max_iter)?;
    let mut iterations = best.iterations;
    if !settled(&best, x) {
        if let Some(cont) = continuation(model, cone, lambda, x, max_iter, &mut iterations)? {
            if cont.merit < best.merit {
                best = cont;
            }
        }
    }
    let y = best.y;
    let g = model.eval(&y);
    // best certificate for this `y`: the element of `G(y) + N(y)` nearest `(x − y)/λ`
    let u = match cone {
        Some(c) => c.closest_in_shifted_cone(&y, &g, &((x - &y) / lambda)),
        None => g,
    };
    let residual = (&u * lambda + &y - x).norm();
    Ok(InclusionSolve { y, u, residual, iterations })
}

fn continuation<M: SmoothModel + ?Sized>(
    model: &M,
    cone: Option<&NormalCone>,
    lambda: f64,
    x: &Vector,
    max_iter: usize,
    iterations: &mut usize,
) -> std::result::Result<Option<NormalMapSolve>, SingularJacobian> {
    const MAX_SOLVES: usize = 400;
    let mut solves = 0;
    let mut mu = lambda;
    let mut anchor = loop {
        mu *= 0.25;
        solves += 1;
        if solves > MAX_SOLVES || mu < f64::MIN_POSITIVE {
            return Ok(None);
        }
        let s = newton_normal_map(model, cone, mu, x, x.clone(), max_iter)?;
        *iterations += s.iterations;
        if settled(&s, x) {
            break s;
        }
    };
    let mut factor = 4.0f64;
    while mu < lambda {
        let next = (mu * factor).min(lambda);
        // `w − y` is λ times a normal vector, so it scales with the index.
        let w0 = &anchor.y + (&anchor.w - &anchor.y) * (next / mu);
        solves += 1;
        if solves > MAX_SOLVES {
            return Ok(None);
        }
        let s = newton_normal_map(model, cone, next, x, w0, max_iter)?;
        *iterations += s.iterations;
        if settled(&s, x) {
            anchor = s;
            mu = next;
            factor = (factor * 2.0).min(64.0);
        } else {
            factor = factor.sqrt();
            if factor < 1.0 + 1e-6 {
                return Ok(None);
            }
        }
    }
    Ok(Some(anchor))
}

/// Root of the strictly increasing scalar map `t + λp(t) = c` (slope ≥ 1).
/// Newton steps safeguarded by a bracket that the unit slope bound provides.
fn solve_scalar_monotone(op: &super::Poly1d, lambda: f64, c: f64) -> f64 {
    let g = |t: f64| t + lambda * op.eval(t) - c;
    let mut t = c;
    let g0 = g(t);
    if g0 == 0.0 {
        return t;
    }
    // slope ≥ 1, so the root sits between t and t − g(t)
    let (mut lo, mut hi) = if g0 > 0.0 { (t - g0, t) } else { (t, t - g0) };
    let tol = 1e-15 * c.abs().max(1.0);
    for _ in 0..200 {
        let gt = g(t);
        if gt.abs() <= tol {
            break;
        }
        if gt > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = 1.0 + lambda * op.derivative(t, 1);
        let mut next = t - gt / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == t || hi - lo <= 4.0 * f64::EPSILON * t.abs().max(1e-300) {
            break;
        }
        t = next;
    }
    t
}

/// `(I + λA)⁻¹x` with default tolerances.
pub fn resolvent(op: &OperatorSpec, lambda: f64, x: &Vector) -> Result<ResolventResult> {
    resolvent_with(op, lambda, x, ResolventOptions::default())
}

/// `(I + λA)⁻¹x`.
///
/// Dispatches to the cheapest exact route: a projection for a pure normal
/// cone, one linear solve for an affine map, coordinatewise scalar roots for
/// a separable polynomial (optionally on a box), and semismooth Newton for
/// everything else.
pub fn resolvent_with(
    op: &OperatorSpec,
    lambda: f64,
    x: &Vector,
    opts: ResolventOptions,
) -> Result<ResolventResult> {
    op.check_dim(x)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("resolvent index must be positive, got {lambda}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("resolvent input is not finite".into()));
    }
    let d = op.dim();
    let cone = op.normal_cone();
    let model = SingleValued(op);

    let (y, v, residual, iterations) = if !op.has_single_valued() {
        let cone = cone.expect("operator without parts is rejected at construction");
        let y = cone.project(x);
        let v = (x - &y) / lambda;
        let residual = (&v * lambda + &y - x).norm();
        (y, v, residual, 0)
    } else if op.is_affine() && cone.is_none() {
        let aff = op.affine().expect("affine operator");
        let lhs = Matrix::identity(d, d) + &aff.matrix * lambda;
        let rhs = x - &aff.offset * lambda;
        let y = lhs
            .lu()
            .solve(&rhs)
            .ok_or(Error::NotConverged { iterations: 0, residual: f64::INFINITY })?;
        let v = &aff.matrix * &y + &aff.offset;
        let residual = (&v * lambda + &y - x).norm();
        (y, v, residual, 1)
    } else if op.affine().is_none()
        && op.radial_cubic().is_none()
        && !matches!(cone, Some(NormalCone::Ball { .. }))
    {
        let poly = op.poly1d().expect("separable polynomial operator");
        let mut y = Vector::from_fn(d, |i, _| solve_scalar_monotone(poly, lambda, x[i]));
        if let Some(c) = cone {
            y = c.project(&y);
        }
        let (y, v, residual) = finalize(&model, cone, lambda, x, &y);
        (y, v, residual, 1)
    } else {
        let start = x.clone();
        let solve = solve_inclusion(&model, cone, lambda, x, &start, opts.max_iter).map_err(
            |s| Error::NotConverged { iterations: s.iterations, residual: f64::INFINITY },
        )?;
        (solve.y, solve.u, solve.residual, solve.iterations)
    };

    let bound = opts.tol * 1f64.max((&y - x).norm());
    if residual <= bound {
        return Ok(ResolventResult { y, v, lambda, residual, membership_defect: 0.0 });
    }
    // For large λ the exact-membership pair inherits λ times the error in y.
    // Moving that error into v instead leaves a defect of residual/λ.
    let defect = residual / lambda;
    let v_alt = (x - &y) / lambda;
    let residual_alt = (&v_alt * lambda + &y - x).norm();
    if residual_alt <= bound && defect <= opts.tol * 1f64.max(v_alt.norm()) {
        return Ok(ResolventResult { y, v: v_alt, lambda, residual: residual_alt, membership_defect: defect });
    }
    Err(Error::NotConverged { iterations, residual })
}
