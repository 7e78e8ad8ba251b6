//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numeric kernels (f32 or f64).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn to_f64_(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }

    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize conversion")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

/// Mean of a slice. Panics on empty input; callers validate first.
pub fn mean<S: Real>(values: &[S]) -> S {
    debug_assert!(!values.is_empty());
    values.iter().copied().sum::<S>() / S::of_usize(values.len())
}

/// Population standard deviation (divide by n).
pub fn population_std<S: Real>(values: &[S], mean: S) -> S {
    debug_assert!(!values.is_empty());
    let n = S::of_usize(values.len());
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<S>();
    (ss / n).sqrt()
}

/// Sample standard deviation (divide by n - 1); zero for a single value.
pub fn sample_std<S: Real>(values: &[S], mean: S) -> S {
    if values.len() < 2 {
        return S::zero();
    }
    let n = S::of_usize(values.len() - 1);
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<S>();
    (ss / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_population_std_two_points() {
        let v = [1.0f64, 3.0];
        let m = mean(&v);
        assert_eq!(m, 2.0);
        assert_eq!(population_std(&v, m), 1.0);
    }

    #[test]
    fn works_for_f32() {
        let v = [1.0f32, 3.0];
        assert_eq!(mean(&v), 2.0f32);
    }
}
