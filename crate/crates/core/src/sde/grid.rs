use crate::error::{domain, Result};
use crate::scalar::{count, Real};

/// Uniform time grid `t0 = τ₀ < τ₁ < … < τ_M = t1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<T: Real = f64> {
    t0: T,
    t1: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t0: T, t1: T, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(domain(format!("time grid needs t1 > t0, got [{t0}, {t1}]")));
        }
        if steps == 0 {
            return Err(domain("time grid needs at least one step"));
        }
        Ok(Self { t0, t1, steps })
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn t1(&self) -> T {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn span(&self) -> T {
        self.t1 - self.t0
    }

    pub fn dt(&self) -> T {
        self.span() / count(self.steps)
    }

    /// Node `τᵢ`; the last node is exactly `t1`.
    pub fn node(&self, i: usize) -> T {
        if i == self.steps {
            self.t1
        } else {
            self.t0 + self.span() * count::<T>(i) / count::<T>(self.steps)
        }
    }

    /// The sub-grid spanning nodes `first..=last`.
    pub fn slice(&self, first: usize, last: usize) -> Result<Self> {
        if first >= last || last > self.steps {
            return Err(domain(format!("invalid grid slice {first}..={last} of {}", self.steps)));
        }
        Self::new(self.node(first), self.node(last), last - first)
    }

    pub fn cast<S: Real>(&self) -> TimeGrid<S> {
        TimeGrid {
            t0: crate::scalar::lit(self.t0.primal()),
            t1: crate::scalar::lit(self.t1.primal()),
            steps: self.steps,
        }
    }
}
