//! Closed real intervals with outward rounding.
//!
//! Every operation widens its result by one ulp on each side, so the computed
//! interval always contains the exact real result of the operation applied to
//! any points of the operands.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && 0.0 <= self.hi
    }

    fn outward(lo: f64, hi: f64) -> Self {
        Self {
            lo: lo.next_down(),
            hi: hi.next_up(),
        }
    }

    /// Reciprocal; `None` when the interval touches zero.
    pub fn recip(self) -> Option<Self> {
        if self.contains_zero() {
            return None;
        }
        Some(Self::outward(1.0 / self.hi, 1.0 / self.lo))
    }

    pub fn div(self, rhs: Self) -> Option<Self> {
        rhs.recip().map(|r| self * r)
    }

    pub fn scale(self, k: f64) -> Self {
        if k >= 0.0 {
            Self::outward(self.lo * k, self.hi * k)
        } else {
            Self::outward(self.hi * k, self.lo * k)
        }
    }

    pub fn shift(self, k: f64) -> Self {
        Self::outward(self.lo + k, self.hi + k)
    }

    pub fn sqrt(self) -> Self {
        let lo = self.lo.max(0.0).sqrt();
        Self::outward(lo, self.hi.max(0.0).sqrt()).clamp_below(0.0)
    }

    pub fn square(self) -> Self {
        if self.lo >= 0.0 {
            Self::outward(self.lo * self.lo, self.hi * self.hi).clamp_below(0.0)
        } else if self.hi <= 0.0 {
            Self::outward(self.hi * self.hi, self.lo * self.lo).clamp_below(0.0)
        } else {
            let m = self.lo.abs().max(self.hi.abs());
            Self::outward(0.0, m * m).clamp_below(0.0)
        }
    }

    fn clamp_below(self, floor: f64) -> Self {
        Self {
            lo: self.lo.max(floor),
            hi: self.hi.max(floor),
        }
    }

    /// Intersection, `None` when disjoint.
    pub fn intersect(self, other: Self) -> Option<Self> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Self { lo, hi })
    }

    pub fn hull(self, other: Self) -> Self {
        Self {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Self) -> Self {
        Self::outward(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Self) -> Self {
        Self::outward(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Self {
        Self {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Self) -> Self {
        let c = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::outward(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn product_of_mixed_signs() {
        let p = Interval::new(-2.0, 3.0) * Interval::new(-1.0, 4.0);
        assert!(p.lo <= -8.0 && p.hi >= 12.0);
        assert!(p.lo > -8.0001 && p.hi < 12.0001);
    }

    #[test]
    fn recip_rejects_zero() {
        assert!(Interval::new(-1.0, 1.0).recip().is_none());
        assert!(Interval::new(0.0, 1.0).recip().is_none());
        let r = Interval::new(2.0, 4.0).recip().unwrap();
        assert!(r.contains(0.25) && r.contains(0.5));
    }

    proptest! {
        #[test]
        fn ops_contain_pointwise_results(
            a in -50.0f64..50.0, wa in 0.0f64..5.0, ta in 0.0f64..1.0,
            b in -50.0f64..50.0, wb in 0.0f64..5.0, tb in 0.0f64..1.0,
        ) {
            let ia = Interval::new(a, a + wa);
            let ib = Interval::new(b, b + wb);
            let x = a + ta * wa;
            let y = b + tb * wb;
            prop_assert!((ia + ib).contains(x + y));
            prop_assert!((ia - ib).contains(x - y));
            prop_assert!((ia * ib).contains(x * y));
            prop_assert!(ia.square().contains(x * x));
            prop_assert!(ia.scale(-3.5).contains(x * -3.5));
            if let Some(q) = ia.div(ib) {
                prop_assert!(q.contains(x / y));
            }
        }
    }
}
