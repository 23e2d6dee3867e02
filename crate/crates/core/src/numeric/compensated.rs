use serde::{Deserialize, Serialize};

/// Running sum with Neumaier compensation.
///
/// `total` holds the naive running sum and `compensation` the accumulated
/// rounding error; [`CompensatedSum::value`] combines them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    pub total: f64,
    pub compensation: f64,
}

impl CompensatedSum {
    pub const fn new() -> Self {
        Self {
            total: 0.0,
            compensation: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, term: f64) {
        let t = self.total + term;
        if self.total.abs() >= term.abs() {
            self.compensation += (self.total - t) + term;
        } else {
            self.compensation += (term - t) + self.total;
        }
        self.total = t;
    }

    /// Functional form of [`CompensatedSum::add`].
    #[must_use]
    pub fn with(mut self, term: f64) -> Self {
        self.add(term);
        self
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.total + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// `comp_add` as a free function.
pub fn comp_add(acc: CompensatedSum, term: f64) -> CompensatedSum {
    acc.with(term)
}
