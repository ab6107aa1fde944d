use super::resolvent::SmoothModel;
use super::{Matrix, OperatorSpec, Vector};
use crate::error::{Error, Result};

/// `(p−1)`th-order Taylor model of the single-valued part around `anchor`:
/// `F_a(u) = Σ_{j<p} (1/j!) D^{(j)}F(a)[u − a]^j`. For `p = 1` this is the
/// frozen value `F(a)`.
#[derive(Debug, Clone)]
pub struct TaylorSurrogate<'a> {
    op: &'a OperatorSpec,
    anchor: Vector,
    order: usize,
}

impl<'a> TaylorSurrogate<'a> {
    pub fn new(op: &'a OperatorSpec, anchor: Vector, order: usize) -> Result<Self> {
        op.check_dim(&anchor)?;
        if order == 0 {
            return Err(Error::InvalidParameter("Taylor order p must be >= 1".into()));
        }
        Ok(TaylorSurrogate { op, anchor, order })
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Terms above the operator's polynomial degree vanish identically.
    fn top_term(&self) -> usize {
        (self.order - 1).min(self.op.max_taylor_order())
    }

    pub fn eval(&self, u: &Vector) -> Vector {
        let h = u - &self.anchor;
        (0..=self.top_term())
            .map(|j| self.op.taylor_term(&self.anchor, &h, j))
            .fold(Vector::zeros(self.op.dim()), |acc, t| acc + t)
    }

    /// `Σ_j ‖term_j(u)‖`, the scale that rounding in [`Self::eval`] is relative to.
    pub fn eval_magnitude(&self, u: &Vector) -> f64 {
        let h = u - &self.anchor;
        (0..=self.top_term()).map(|j| self.op.taylor_term(&self.anchor, &h, j).norm()).sum()
    }

    /// `F(u) − F_{anchor}(u)` as the tail of the (finite) Taylor expansion of
    /// the polynomial `F`, free of the cancellation in the direct difference.
    pub fn remainder(&self, u: &Vector) -> Vector {
        let h = u - &self.anchor;
        (self.order..=self.op.max_taylor_order())
            .map(|j| self.op.taylor_term(&self.anchor, &h, j))
            .fold(Vector::zeros(self.op.dim()), |acc, t| acc + t)
    }

    pub fn jacobian(&self, u: &Vector) -> Matrix {
        let d = self.op.dim();
        let h = u - &self.anchor;
        (1..=self.top_term())
            .map(|j| self.op.taylor_term_jacobian(&self.anchor, &h, j))
            .fold(Matrix::zeros(d, d), |acc, t| acc + t)
    }
}

impl SmoothModel for TaylorSurrogate<'_> {
    fn eval(&self, y: &Vector) -> Vector {
        TaylorSurrogate::eval(self, y)
    }

    fn jacobian(&self, y: &Vector) -> Matrix {
        TaylorSurrogate::jacobian(self, y)
    }
}

/// Evaluates the order-`p` Taylor surrogate of `F` around `anchor` at `u`.
pub fn taylor_surrogate(op: &OperatorSpec, anchor: &Vector, p: usize, u: &Vector) -> Result<Vector> {
    op.check_dim(u)?;
    Ok(TaylorSurrogate::new(op, anchor.clone(), p)?.eval(u))
}
