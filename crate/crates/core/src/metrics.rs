//! Optimality measures and empirical rate fitting.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{Matrix, NormalCone, Vector, DOMAIN_TOL};
use crate::problems::ProblemInstance;

/// Values at or below this are treated as exact zeros when fitting rates.
pub const FIT_FLOOR: f64 = 1e-14;
pub const FIT_MIN_POINTS: usize = 10;
/// Natural-residual tolerance certifying the inner gap maximization.
pub const GAP_KKT_TOL: f64 = 1e-8;

const GAP_STARTS: usize = 16;
const GAP_SEED: u64 = 0x6a9;
const GAP_MAX_ITERS: usize = 50_000;

/// `gap(x) = sup_{z ∈ dom A} sup_{ξ ∈ Az} ⟨ξ, x − z⟩` for `A = F + N_X` with
/// affine `F` and bounded `X`.
///
/// For `x ∈ X` the normal-cone part only lowers the inner product, so the
/// value is `max_{z ∈ X} ⟨Mz + q, x − z⟩`. When `M` is skew the objective is
/// linear and maximized at a vertex (box) or boundary point (ball); otherwise
/// it is a concave quadratic, solved by accelerated projected gradient from
/// several starts and certified by its natural residual.
pub fn gap(problem: &ProblemInstance, x: &Vector) -> Result<f64> {
    let op = &problem.operator;
    op.check_dim(x)?;
    let cone = match op.normal_cone() {
        Some(c) if op.domain_bounded() => c,
        _ => return Err(Error::DomainUnbounded),
    };
    if !op.in_domain(x, DOMAIN_TOL) {
        return Err(Error::OutsideDomain);
    }
    if op.poly1d().is_some() || op.radial_cubic().is_some() {
        return Err(Error::Unsupported("gap is only available for affine single-valued parts".into()));
    }
    let (m, q) = match op.affine() {
        Some(a) => (a.matrix.clone(), a.offset.clone()),
        None => return Ok(0.0),
    };
    // objective: ⟨c, z⟩ − zᵀSz + ⟨q, x⟩
    let c = m.transpose() * x - &q;
    let sym = (&m + m.transpose()) * 0.5;
    let base = q.dot(x);
    let curvature = SymmetricEigen::new(sym.clone()).eigenvalues.max().max(0.0);
    let scale = 1.0 + m.norm();

    let value = if curvature <= 1e-14 * scale {
        let z = linear_maximizer(cone, &c);
        base + c.dot(&z) - z.dot(&(&sym * &z))
    } else {
        let objective = |z: &Vector| base + c.dot(z) - z.dot(&(&sym * z));
        let gradient = |z: &Vector| &c - (&sym * z) * 2.0;
        let lip = 2.0 * curvature;
        let mut rng = ChaCha8Rng::seed_from_u64(GAP_SEED);
        let mut best = f64::NEG_INFINITY;
        let mut best_kkt = f64::INFINITY;
        for s in 0..GAP_STARTS {
            let start = if s == 0 { cone.project(x) } else { cone.sample_interior(&mut rng) };
            let mut z = fista(cone, &gradient, lip, start);
            if let NormalCone::Box { lower, upper } = cone {
                z = polish_box(lower, upper, &sym, &c, z, &objective, &gradient);
            }
            let kkt = natural_residual(cone, &gradient, &z);
            let val = objective(&z);
            if val > best {
                best = val;
            }
            best_kkt = best_kkt.min(kkt);
        }
        if !(best_kkt <= GAP_KKT_TOL * 1f64.max(c.norm())) {
            return Err(Error::NotConverged { iterations: GAP_MAX_ITERS, residual: best_kkt });
        }
        best
    };
    Ok(value.max(0.0))
}

fn linear_maximizer(cone: &NormalCone, c: &Vector) -> Vector {
    match cone {
        NormalCone::Box { lower, upper } => {
            Vector::from_fn(c.len(), |i, _| if c[i] > 0.0 { upper[i] } else if c[i] < 0.0 { lower[i] } else { 0.5 * (lower[i] + upper[i]) })
        }
        NormalCone::Ball { center, radius } => {
            let n = c.norm();
            if n == 0.0 {
                center.clone()
            } else {
                center + c * (*radius / n)
            }
        }
    }
}

fn natural_residual<G: Fn(&Vector) -> Vector>(cone: &NormalCone, gradient: &G, z: &Vector) -> f64 {
    (z - cone.project(&(z + gradient(z)))).norm()
}

fn fista<G: Fn(&Vector) -> Vector>(cone: &NormalCone, gradient: &G, lip: f64, start: Vector) -> Vector {
    let step = 1.0 / lip;
    let mut z = start.clone();
    let mut w = start;
    let mut t = 1.0f64;
    for it in 0..GAP_MAX_ITERS {
        let next = cone.project(&(&w + gradient(&w) * step));
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / tn;
        w = &next + (&next - &z) * momentum;
        let moved = (&next - &z).norm();
        z = next;
        t = tn;
        // periodic restart keeps the iteration monotone enough on flat directions
        if it % 200 == 199 {
            t = 1.0;
            w = z.clone();
        }
        if moved <= 1e-15 * (1.0 + z.norm()) && natural_residual(cone, gradient, &z) <= 1e-13 {
            break;
        }
    }
    z
}

/// Re-solves the stationarity system on the free coordinates of the
/// current active set; keeps the result only if it is feasible and no worse.
fn polish_box<F, G>(
    lower: &Vector,
    upper: &Vector,
    sym: &Matrix,
    c: &Vector,
    mut z: Vector,
    objective: &F,
    gradient: &G,
) -> Vector
where
    F: Fn(&Vector) -> f64,
    G: Fn(&Vector) -> Vector,
{
    let d = z.len();
    for _ in 0..5 {
        let g = gradient(&z);
        let free: Vec<usize> = (0..d)
            .filter(|&i| {
                let at_up = z[i] >= upper[i] - 1e-10 && g[i] > 0.0;
                let at_lo = z[i] <= lower[i] + 1e-10 && g[i] < 0.0;
                !(at_up || at_lo)
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let fixed: Vec<usize> = (0..d).filter(|i| !free.contains(i)).collect();
        let nf = free.len();
        let a = Matrix::from_fn(nf, nf, |r, s| 2.0 * sym[(free[r], free[s])]);
        let b = Vector::from_fn(nf, |r, _| {
            let i = free[r];
            c[i] - 2.0 * fixed.iter().map(|&j| sym[(i, j)] * z[j]).sum::<f64>()
        });
        let Ok(sol) = a.clone().svd(true, true).solve(&b, 1e-13) else { break };
        let mut cand = z.clone();
        for (r, &i) in free.iter().enumerate() {
            cand[i] = sol[r];
        }
        let feasible = (0..d).all(|i| cand[i] >= lower[i] - 1e-12 && cand[i] <= upper[i] + 1e-12);
        if !feasible {
            break;
        }
        let cand = Vector::from_fn(d, |i, _| cand[i].clamp(lower[i], upper[i]));
        if objective(&cand) + 1e-15 < objective(&z) {
            break;
        }
        let same = (&cand - &z).norm() <= 1e-15;
        z = cand;
        if same {
            break;
        }
    }
    z
}

/// `res(x) = inf_{ξ ∈ Ax} ‖ξ‖`.
pub fn residue(problem: &ProblemInstance, x: &Vector) -> Result<f64> {
    problem.operator.residue(x)?.ok_or(Error::OutsideDomain)
}

/// `½‖x − z‖²`.
pub fn lyapunov(x: &Vector, z: &Vector) -> f64 {
    0.5 * (x - z).norm_squared()
}

pub fn dist_to_solutions(problem: &ProblemInstance, x: &Vector) -> Result<f64> {
    problem.operator.check_dim(x)?;
    Ok((x - problem.nearest_solution(x)?).norm())
}

/// Running minimum, e.g. best residue seen so far.
pub fn running_min(values: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    values
        .iter()
        .map(|&v| {
            if v < best {
                best = v;
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Index range `(first, last)` of the points used.
    pub window: (f64, f64),
    /// Points discarded in the tail for being at or below the floor.
    pub dropped: usize,
}

/// Least-squares line through `(log t, log v)` over the last `tail_fraction`
/// of the series.
pub fn fit_rate(series: &[(f64, f64)], tail_fraction: f64) -> Result<RateFit> {
    fit_tail(series, tail_fraction, f64::ln)
}

/// Least-squares line through `(t, log v)`; the slope is the exponential rate.
pub fn fit_exponential(series: &[(f64, f64)], tail_fraction: f64) -> Result<RateFit> {
    fit_tail(series, tail_fraction, |t| t)
}

fn fit_tail(series: &[(f64, f64)], tail_fraction: f64, tx: fn(f64) -> f64) -> Result<RateFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let n = series.len();
    let take = ((n as f64) * tail_fraction).ceil() as usize;
    let tail = &series[n - take.min(n)..];
    let mut pts = Vec::with_capacity(tail.len());
    let mut dropped = 0;
    for &(t, v) in tail {
        if !(v > FIT_FLOOR) || !(t > 0.0) || !v.is_finite() || !t.is_finite() {
            dropped += 1;
        } else {
            pts.push((t, v));
        }
    }
    if pts.len() < FIT_MIN_POINTS {
        return Err(Error::InsufficientPoints { needed: FIT_MIN_POINTS, got: pts.len() });
    }
    let xs: Vec<f64> = pts.iter().map(|p| tx(p.0)).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("fit window has a single abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let window = (pts[0].0, pts[pts.len() - 1].0);
    Ok(RateFit { slope, intercept, r_squared, window, dropped })
}
