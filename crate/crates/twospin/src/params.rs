//! Model parameters for a two-spin system.
//!
//! A system is specified by edge activities `beta` (both endpoints
//! unoccupied) and `gamma` (both occupied) and a vertex activity `lambda`
//! for occupied vertices. The supported regime is the antiferromagnetic
//! one: `beta * gamma < 1` with both nonnegative and not both zero, and
//! `lambda > 0`. The hard-core model is `beta = 1, gamma = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpinParams {
    pub beta: Scalar,
    pub gamma: Scalar,
    pub lambda: Scalar,
}

impl SpinParams {
    pub fn new(beta: Scalar, gamma: Scalar, lambda: Scalar) -> Result<Self> {
        let p = SpinParams { beta, gamma, lambda };
        p.validate()?;
        Ok(p)
    }

    /// Hard-core model at the given vertex activity.
    pub fn hard_core(lambda: Scalar) -> Result<Self> {
        SpinParams::new(Scalar::one(), Scalar::zero(), lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_negative() || self.gamma.is_negative() {
            return Err(Error::Infeasible(
                "edge activities must be nonnegative".into(),
            ));
        }
        if self.beta.is_zero() && self.gamma.is_zero() {
            return Err(Error::Infeasible(
                "edge activities must not both be zero".into(),
            ));
        }
        if &self.beta * &self.gamma >= Scalar::one() {
            return Err(Error::Infeasible(
                "antiferromagnetic regime requires beta*gamma < 1".into(),
            ));
        }
        if !self.lambda.is_positive() {
            return Err(Error::Infeasible("vertex activity must be positive".into()));
        }
        Ok(())
    }

    pub fn is_rational(&self) -> bool {
        self.beta.is_rat() && self.gamma.is_rat() && self.lambda.is_rat()
    }

    pub fn is_hard_core(&self) -> bool {
        self.beta == Scalar::one() && self.gamma.is_zero()
    }

    /// The one excluded point of the regime: `beta == gamma` at unit vertex
    /// activity, where every configuration has equal weight under field
    /// symmetry and no gadget can separate anything.
    pub fn is_trivial_point(&self) -> bool {
        self.beta == self.gamma && self.lambda == Scalar::one()
    }

    /// The unique vertex activity at which the triangle gadget is
    /// admissible, `(1 - beta) / (1 - gamma)`; `None` when undefined or
    /// nonpositive.
    pub fn triangle_lambda(beta: &Scalar, gamma: &Scalar) -> Option<Scalar> {
        let one = Scalar::one();
        if *gamma >= one || *beta >= one {
            return None;
        }
        Some((&one - beta) / (&one - gamma))
    }

    pub fn with_lambda(&self, lambda: Scalar) -> Result<Self> {
        SpinParams::new(self.beta.clone(), self.gamma.clone(), lambda)
    }

    /// `1 - beta * gamma`, positive throughout the regime.
    pub fn one_minus_bg(&self) -> Scalar {
        Scalar::one() - &self.beta * &self.gamma
    }

    /// The same parameters with every activity converted to a big float at
    /// `prec` bits, so downstream evaluation runs in fixed precision
    /// instead of exact rationals (whose bit size doubles per merge level).
    pub fn to_float(&self, prec: u32) -> SpinParams {
        SpinParams {
            beta: Scalar::Big(self.beta.to_big(prec)),
            gamma: Scalar::Big(self.gamma.to_big(prec)),
            lambda: Scalar::Big(self.lambda.to_big(prec)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_hard_core_and_soft_points() {
        assert!(SpinParams::hard_core(Scalar::one()).is_ok());
        assert!(SpinParams::new(
            Scalar::from_ratio(1, 2),
            Scalar::from_ratio(1, 4),
            Scalar::from_ratio(2, 3)
        )
        .is_ok());
    }

    #[test]
    fn rejects_out_of_regime() {
        assert!(SpinParams::new(Scalar::from_int(2), Scalar::one(), Scalar::one()).is_err());
        assert!(SpinParams::new(Scalar::zero(), Scalar::zero(), Scalar::one()).is_err());
        assert!(SpinParams::new(Scalar::one(), Scalar::zero(), Scalar::zero()).is_err());
        assert!(
            SpinParams::new(Scalar::one(), Scalar::zero(), Scalar::from_int(-1)).is_err()
        );
    }

    #[test]
    fn trivial_point_detection() {
        let p =
            SpinParams::new(Scalar::from_ratio(1, 2), Scalar::from_ratio(1, 2), Scalar::one())
                .unwrap();
        assert!(p.is_trivial_point());
        assert!(!p.with_lambda(Scalar::from_ratio(2, 1)).unwrap().is_trivial_point());
    }

    #[test]
    fn triangle_activity() {
        let l = SpinParams::triangle_lambda(&Scalar::from_ratio(1, 2), &Scalar::from_ratio(1, 4))
            .unwrap();
        assert_eq!(l, Scalar::from_ratio(2, 3));
        assert!(SpinParams::triangle_lambda(&Scalar::zero(), &Scalar::one()).is_none());
    }
}
