use std::fmt;
use std::sync::Arc;

/// A named test function `f: (0, inf) -> R` integrated against point
/// measures.
#[derive(Clone)]
pub struct TestFn {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for TestFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFn({})", self.name)
    }
}

impl TestFn {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn one() -> Self {
        Self::new("one", |_| 1.0)
    }

    pub fn identity() -> Self {
        Self::new("id", |x| x)
    }

    pub fn square() -> Self {
        Self::new("x^2", |x| x * x)
    }

    /// Smooth bump supported on `(lo, hi)`, symmetric in `ln x`, with peak
    /// value `height` at `sqrt(lo hi)`.
    pub fn bump(lo: f64, hi: f64, height: f64) -> Self {
        assert!(0.0 < lo && lo < hi);
        Self::new(format!("bump[{lo},{hi}]"), move |x| height * bump_shape(lo, hi, x))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

/// Unit-height bump on `(lo, hi)` in log coordinates.
pub fn bump_shape(lo: f64, hi: f64, x: f64) -> f64 {
    let (a, b) = (lo.ln(), hi.ln());
    let u = (2.0 * x.ln() - a - b) / (b - a);
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}
