//! Small vector helpers and the `LinearOp` abstraction shared by every
//! state representation.

use num_complex::Complex64;

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

/// `measure * Σ conj(a) b`
pub fn inner(a: &[C64], b: &[C64], measure: f64) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let s: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    s * measure
}

pub fn norm_sqr(a: &[C64], measure: f64) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>() * measure
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn all_finite(a: &[C64]) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// A self-adjoint linear action on amplitude vectors of fixed length.
pub trait LinearOp: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, input: &[C64], out: &mut [C64]);

    /// Diagonal entries in the working basis, when cheap to produce.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }

    /// True when the operator is exactly its diagonal.
    fn is_diagonal(&self) -> bool {
        false
    }

    fn apply_vec(&self, input: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); input.len()];
        self.apply(input, &mut out);
        out
    }

    /// `<psi|A|psi>` with the given measure; real for self-adjoint `A`.
    fn expectation(&self, psi: &[C64], measure: f64) -> f64 {
        inner(psi, &self.apply_vec(psi), measure).re
    }
}

/// Multiplication by a real function of the basis index.
#[derive(Debug, Clone)]
pub struct DiagonalOp {
    pub values: Vec<f64>,
}

impl DiagonalOp {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl LinearOp for DiagonalOp {
    fn dim(&self) -> usize {
        self.values.len()
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        for ((o, x), v) in out.iter_mut().zip(input).zip(&self.values) {
            *o = x * v;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.values.clone())
    }

    fn is_diagonal(&self) -> bool {
        true
    }
}

/// The zero operator, used as the linear part of pure-WFE flows.
#[derive(Debug, Clone, Copy)]
pub struct ZeroOp(pub usize);

impl LinearOp for ZeroOp {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, _input: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.0])
    }

    fn is_diagonal(&self) -> bool {
        true
    }
}

/// Binomial coefficient as a float; exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}
