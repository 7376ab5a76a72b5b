//! Exactly rounded floating-point summation.
//!
//! The accumulator keeps a non-overlapping expansion of partial sums (Shewchuk)
//! and rounds it once at the end (the same final-rounding step as Python's
//! `math.fsum`). Two accumulators can be merged without error, so partial
//! sums computed on different workers combine to the same bits as a single
//! pass over all terms.

/// Order-independent sum of finite `f64` terms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactAccumulator {
    partials: Vec<f64>,
}

impl ExactAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactAccumulator) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials
    }

    pub fn from_partials(partials: Vec<f64>) -> Self {
        let mut acc = Self::new();
        for p in partials {
            acc.add(p);
        }
        acc
    }

    /// Correctly rounded (round-half-even) value of the exact sum.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = ExactAccumulator::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancellation_is_exact() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum([]), 0.0);
        // naive left-to-right gives 0.0
        assert_eq!(exact_sum([1.0, 1e-16, 1e-16, -1.0]), 2e-16);
    }

    proptest! {
        #[test]
        fn order_and_grouping_independent(
            mut xs in proptest::collection::vec(-1e6f64..1e6, 0..40),
            split in 0usize..40,
            seed in any::<u64>(),
        ) {
            let whole = exact_sum(xs.iter().copied());
            let k = split.min(xs.len());
            let mut a = ExactAccumulator::new();
            let mut b = ExactAccumulator::new();
            for &x in &xs[..k] { a.add(x); }
            for &x in &xs[k..] { b.add(x); }
            b.merge(&a);
            prop_assert_eq!(b.value().to_bits(), whole.to_bits());

            // deterministic shuffle
            let mut s = seed;
            for i in (1..xs.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                xs.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(exact_sum(xs.iter().copied()).to_bits(), whole.to_bits());
        }
    }
}
