//! Scalar abstraction for the time stepper, with a forward-mode dual number.
//!
//! The explicit part of the scheme is written once over [`Real`]; running it
//! on [`Dual`] yields exact directional derivatives of the discrete map.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::Result;

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> + Mul<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;

    fn value(self) -> f64;

    /// Image under a scalar function with value `fv` and derivative `dfv` at `self.value()`.
    fn lift(self, fv: f64, dfv: f64) -> Self;

    /// Clamps the value to `[0, 1]`, keeping the tangent. Returns the excursion removed.
    fn clamp_unit(self) -> (Self, f64);

    /// Solves a linear system lane by lane with a real-valued solver.
    fn solve_lanes(
        rhs: &[Self],
        solve: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<Self>>;
}

fn clamp_excursion(v: f64) -> (f64, f64) {
    if v < 0.0 {
        (0.0, -v)
    } else if v > 1.0 {
        (1.0, v - 1.0)
    } else {
        (v, 0.0)
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn lift(self, fv: f64, _dfv: f64) -> Self {
        fv
    }

    #[inline]
    fn clamp_unit(self) -> (Self, f64) {
        clamp_excursion(self)
    }

    fn solve_lanes(
        rhs: &[Self],
        solve: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<Self>> {
        solve(rhs)
    }
}

/// `v + d·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, c: f64) -> Dual {
        Dual::new(self.v * c, self.d * c)
    }
}

impl Real for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }

    #[inline]
    fn value(self) -> f64 {
        self.v
    }

    #[inline]
    fn lift(self, fv: f64, dfv: f64) -> Self {
        Dual::new(fv, dfv * self.d)
    }

    #[inline]
    fn clamp_unit(self) -> (Self, f64) {
        let (v, e) = clamp_excursion(self.v);
        (Dual::new(v, self.d), e)
    }

    fn solve_lanes(
        rhs: &[Self],
        solve: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<Self>> {
        let v: Vec<f64> = rhs.iter().map(|x| x.v).collect();
        let d: Vec<f64> = rhs.iter().map(|x| x.d).collect();
        let xv = solve(&v)?;
        let xd = solve(&d)?;
        Ok(xv.into_iter().zip(xd).map(|(v, d)| Dual::new(v, d)).collect())
    }
}
