//! Compensated summation.
//!
//! Losses on the hard instance are compared at the 1e-12 level and below, so
//! every mean over dataset rows goes through Neumaier's variant of Kahan
//! summation. Order of accumulation is fixed (row order), so results are
//! bitwise reproducible.

#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Mean of `values`; NaN for an empty iterator.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::new();
    let mut count = 0usize;
    for v in values {
        acc.add(v);
        count += 1;
    }
    acc.value() / count as f64
}
