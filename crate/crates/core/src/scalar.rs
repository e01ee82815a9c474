//! Floating-point abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used for embeddings, similarities and relevance scores.
///
/// Implemented for `f32` and `f64`. Conversions go through `f64` so that
/// client backends (which always speak `f64`) can feed either width.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn from_f64_lossy(x: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Logistic squashing `1 / (1 + e^-x)` into `(0, 1)`.
    fn logistic(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(x: f64) -> Self {
        x
    }
}

impl Scalar for f32 {
    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }
}

/// Total order on scalars where NaN sorts below every number.
pub(crate) fn cmp_scalar<S: Scalar>(a: S, b: S) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or_else(|| match (a.is_nan(), b.is_nan()) {
        (true, true) => std::cmp::Ordering::Equal,
        (true, false) => std::cmp::Ordering::Less,
        _ => std::cmp::Ordering::Greater,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_matches_closed_form() {
        assert!((2.0f64.logistic() - 0.8807970779778823).abs() < 1e-15);
        assert!(((-2.0f64).logistic() - 0.11920292202211755).abs() < 1e-15);
        assert!((2.0f32.logistic() - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn nan_sorts_low() {
        use std::cmp::Ordering;
        assert_eq!(cmp_scalar(f64::NAN, 0.0), Ordering::Less);
        assert_eq!(cmp_scalar(1.0, 0.5), Ordering::Greater);
    }
}
