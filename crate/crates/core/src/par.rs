//! Point-wise map/reduce over index ranges.
//!
//! `Ordered` splits the range into fixed chunks, evaluates them (possibly on several
//! threads) and adds the chunk partials in index order, so the result is bit-identical
//! for any thread count. `Unordered` lets rayon choose the combination tree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Ordered,
    Unordered,
}

/// Accumulator combined by elementwise addition.
pub trait Accumulate: Send {
    fn merge(&mut self, other: Self);
}

impl Accumulate for f64 {
    fn merge(&mut self, other: Self) {
        *self += other;
    }
}

impl Accumulate for Vec<f64> {
    fn merge(&mut self, other: Self) {
        for (a, b) in self.iter_mut().zip(other) {
            *a += b;
        }
    }
}

impl<A: Accumulate, B: Accumulate> Accumulate for (A, B) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

/// Runs `body(range, &mut acc)` over chunks of `0..len` and sums the accumulators.
pub fn reduce<A, I, F>(len: usize, mode: Reduction, init: I, body: F) -> A
where
    A: Accumulate,
    I: Fn() -> A + Sync + Send,
    F: Fn(std::ops::Range<usize>, &mut A) + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK);
    let run = |c: usize| {
        let mut acc = init();
        body(c * CHUNK..((c + 1) * CHUNK).min(len), &mut acc);
        acc
    };
    match mode {
        Reduction::Ordered => {
            let partials: Vec<A> = (0..chunks).into_par_iter().map(run).collect();
            let mut total = init();
            for p in partials {
                total.merge(p);
            }
            total
        }
        Reduction::Unordered => (0..chunks)
            .into_par_iter()
            .map(run)
            .reduce(&init, |mut a, b| {
                a.merge(b);
                a
            }),
    }
}

/// Applies `f` to every index, preserving order.
pub fn map<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_matches_sequential_sum() {
        let xs: Vec<f64> = (0..10_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let seq = {
            let mut total = 0.0;
            for c in xs.chunks(CHUNK) {
                total += c.iter().sum::<f64>();
            }
            total
        };
        let got = reduce(
            xs.len(),
            Reduction::Ordered,
            || 0.0,
            |r, acc| *acc += xs[r].iter().sum::<f64>(),
        );
        assert_eq!(got.to_bits(), seq.to_bits());
        let unordered = reduce(
            xs.len(),
            Reduction::Unordered,
            || 0.0,
            |r, acc| *acc += xs[r].iter().sum::<f64>(),
        );
        assert!((unordered - seq).abs() < 1e-12);
    }

    #[test]
    fn empty_range() {
        let got: Vec<f64> = reduce(0, Reduction::Ordered, || vec![0.0; 3], |_, _| {});
        assert_eq!(got, vec![0.0; 3]);
    }
}
