//! Linear time-invariant plant models.
//!
//! Continuous models `x' = A x + B u, y = C x` are discretized under a
//! zero-order hold into `x[k+1] = G x[k] + H u[k], y[k] = C x[k] + d[k]`,
//! and the discrete model can be lifted into the incremental form used by
//! the predictive controller, with state `[dx[k]; y[k]]`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default relative tolerance for [`matrix_exponential`].
pub const EXPM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtiError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix `{0}` contains non-finite entries")]
    NonFinite(&'static str),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("feedthrough matrix D must be zero")]
    NonzeroFeedthrough,
    #[error("model has {outputs} outputs but only {inputs} inputs (need inputs >= outputs)")]
    TooFewInputs { inputs: usize, outputs: usize },
    #[error("sampling period must be positive and finite, got {0}")]
    InvalidSamplePeriod(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("singular Pade denominator in matrix exponential")]
    SingularPade,
}

fn dims(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn check_finite(m: &DMatrix<f64>, name: &'static str) -> Result<(), LtiError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LtiError::NonFinite(name))
    }
}

fn check_len(v: &DVector<f64>, n: usize, what: &'static str) -> Result<(), LtiError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(LtiError::DimensionMismatch {
            what,
            expected: n.to_string(),
            found: v.len().to_string(),
        })
    }
}

/// Continuous-time plant `x' = A x + B u`, `y = C x` (feedthrough is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl ContinuousStateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, LtiError> {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::from_parts(a, b, c, d)
    }

    /// Builds a model from all four matrices. `D` must be identically zero.
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, LtiError> {
        if !a.is_square() {
            return Err(LtiError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        if b.nrows() != n {
            return Err(LtiError::DimensionMismatch {
                what: "B rows",
                expected: n.to_string(),
                found: dims(&b),
            });
        }
        if c.ncols() != n {
            return Err(LtiError::DimensionMismatch {
                what: "C columns",
                expected: n.to_string(),
                found: dims(&c),
            });
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(LtiError::DimensionMismatch {
                what: "D",
                expected: format!("{}x{}", c.nrows(), b.ncols()),
                found: dims(&d),
            });
        }
        check_finite(&a, "A")?;
        check_finite(&b, "B")?;
        check_finite(&c, "C")?;
        if d.iter().any(|v| *v != 0.0) {
            return Err(LtiError::NonzeroFeedthrough);
        }
        if b.ncols() < c.nrows() {
            return Err(LtiError::TooFewInputs {
                inputs: b.ncols(),
                outputs: c.nrows(),
            });
        }
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Sampled plant `x[k+1] = G x[k] + H u[k]`, `y[k] = C x[k] + d[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    g: DMatrix<f64>,
    h: DMatrix<f64>,
    c: DMatrix<f64>,
    ts: f64,
}

impl DiscreteStateSpace {
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>, c: DMatrix<f64>, ts: f64) -> Result<Self, LtiError> {
        if !g.is_square() {
            return Err(LtiError::NotSquare {
                rows: g.nrows(),
                cols: g.ncols(),
            });
        }
        let n = g.nrows();
        if h.nrows() != n {
            return Err(LtiError::DimensionMismatch {
                what: "H rows",
                expected: n.to_string(),
                found: dims(&h),
            });
        }
        if c.ncols() != n {
            return Err(LtiError::DimensionMismatch {
                what: "C columns",
                expected: n.to_string(),
                found: dims(&c),
            });
        }
        if !(ts.is_finite() && ts > 0.0) {
            return Err(LtiError::InvalidSamplePeriod(ts));
        }
        check_finite(&g, "G")?;
        check_finite(&h, "H")?;
        check_finite(&c, "C")?;
        Ok(Self { g, h, c, ts })
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn sample_period(&self) -> f64 {
        self.ts
    }

    pub fn n_states(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Advances one sample. Returns `(x[k+1], y[k])`.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), LtiError> {
        check_len(x, self.n_states(), "state")?;
        check_len(u, self.n_inputs(), "input")?;
        check_len(d, self.n_outputs(), "output disturbance")?;
        let x_next = &self.g * x + &self.h * u;
        let y = &self.c * x + d;
        Ok((x_next, y))
    }
}

/// Incremental model with state `[dx[k]; y[k]]` driven by input moves `du[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub gm: DMatrix<f64>,
    pub hm: DMatrix<f64>,
    pub cm: DMatrix<f64>,
}

impl AugmentedModel {
    pub fn n_states(&self) -> usize {
        self.gm.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.hm.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.cm.nrows()
    }
}

/// Lifts a discrete model into incremental form:
///
/// ```text
/// Gm = [ G    0  ]   Hm = [ H  ]   Cm = [ 0  I ]
///      [ C G  I  ]        [ C H]
/// ```
pub fn augment(sys: &DiscreteStateSpace) -> AugmentedModel {
    let n = sys.n_states();
    let m = sys.n_inputs();
    let q = sys.n_outputs();
    let cg = sys.c() * sys.g();
    let ch = sys.c() * sys.h();

    let mut gm = DMatrix::zeros(n + q, n + q);
    gm.view_mut((0, 0), (n, n)).copy_from(sys.g());
    gm.view_mut((n, 0), (q, n)).copy_from(&cg);
    gm.view_mut((n, n), (q, q)).fill_with_identity();

    let mut hm = DMatrix::zeros(n + q, m);
    hm.view_mut((0, 0), (n, m)).copy_from(sys.h());
    hm.view_mut((n, 0), (q, m)).copy_from(&ch);

    let mut cm = DMatrix::zeros(q, n + q);
    cm.view_mut((0, n), (q, q)).fill_with_identity();

    AugmentedModel { gm, hm, cm }
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the degree-13 approximant reaches double precision.
const THETA13: f64 = 5.371920351148152;

// (13!)^2 / (26! * 27!): leading coefficient of the [13/13] Pade remainder.
fn pade13_remainder_coeff() -> f64 {
    let mut num = 1.0f64;
    for k in 1..=13 {
        num *= k as f64;
    }
    let mut den = 1.0f64;
    for k in 14..=26 {
        den *= k as f64;
    }
    let mut fact27 = 1.0f64;
    for k in 1..=27 {
        fact27 *= k as f64;
    }
    // 13!^2 / (26! 27!) = 13! / (14..=26 product) / 27!
    num / den / fact27
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a [13/13] Pade approximant.
///
/// The scaling exponent is the smallest one for which the approximant's
/// truncation bound on the scaled matrix falls below `tol`.
pub fn matrix_exponential(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, LtiError> {
    if !m.is_square() {
        return Err(LtiError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(LtiError::InvalidTolerance(tol));
    }
    check_finite(m, "M")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let theta = THETA13.min((tol / pade13_remainder_coeff()).powf(1.0 / 27.0));
    let norm = norm1(m);
    let s = if norm > theta {
        (norm / theta).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let x = m / 2f64.powi(s);

    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let x2 = &x * &x;
    let x4 = &x2 * &x2;
    let x6 = &x4 * &x2;

    let u_inner = &x6 * (&x6 * b[13] + &x4 * b[11] + &x2 * b[9])
        + &x6 * b[7]
        + &x4 * b[5]
        + &x2 * b[3]
        + &ident * b[1];
    let u = &x * u_inner;
    let v = &x6 * (&x6 * b[12] + &x4 * b[10] + &x2 * b[8])
        + &x6 * b[6]
        + &x4 * b[4]
        + &x2 * b[2]
        + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom.lu().solve(&numer).ok_or(LtiError::SingularPade)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Zero-order-hold discretization.
///
/// `G = exp(A Ts)` and `H = (integral over [0, Ts] of exp(A t) dt) B`, both read off
/// `exp([[A, B], [0, 0]] Ts)` so that singular `A` needs no special casing.
pub fn discretize(sys: &ContinuousStateSpace, ts: f64) -> Result<DiscreteStateSpace, LtiError> {
    if !(ts.is_finite() && ts > 0.0) {
        return Err(LtiError::InvalidSamplePeriod(ts));
    }
    let n = sys.n_states();
    let m = sys.n_inputs();
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(&(sys.a() * ts));
    block.view_mut((0, n), (n, m)).copy_from(&(sys.b() * ts));
    let e = matrix_exponential(&block, EXPM_TOLERANCE)?;
    let g = e.view((0, 0), (n, n)).into_owned();
    let h = e.view((0, n), (n, m)).into_owned();
    DiscreteStateSpace::new(g, h, sys.c().clone(), ts)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64, LtiError> {
    if !m.is_square() {
        return Err(LtiError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    check_finite(m, "M")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let e = matrix_exponential(&DMatrix::zeros(2, 2), EXPM_TOLERANCE).unwrap();
        assert_eq!(e, DMatrix::identity(2, 2));
    }

    #[test]
    fn expm_nilpotent() {
        let e = matrix_exponential(&m(2, 2, &[0.0, 1.0, 0.0, 0.0]), EXPM_TOLERANCE).unwrap();
        assert_relative_eq!(e, m(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn expm_diagonal_matches_scalar_exp() {
        let e = matrix_exponential(&m(2, 2, &[-0.1, 0.0, 0.0, -0.2]), EXPM_TOLERANCE).unwrap();
        assert_relative_eq!(e[(0, 0)], (-0.1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-0.2f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(0, 0)], 0.904837418035960, epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)], 0.818730753077982, epsilon = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_large_norm_uses_squaring() {
        let e = matrix_exponential(&m(1, 1, &[-30.0]), EXPM_TOLERANCE).unwrap();
        assert_relative_eq!(e[(0, 0)], (-30.0f64).exp(), max_relative = 1e-12);
        let e = matrix_exponential(&m(1, 1, &[12.5]), EXPM_TOLERANCE).unwrap();
        assert_relative_eq!(e[(0, 0)], 12.5f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(matches!(
            matrix_exponential(&DMatrix::zeros(2, 3), EXPM_TOLERANCE),
            Err(LtiError::NotSquare { .. })
        ));
        assert_eq!(
            matrix_exponential(&m(1, 1, &[f64::NAN]), EXPM_TOLERANCE),
            Err(LtiError::NonFinite("M"))
        );
        assert!(matrix_exponential(&m(1, 1, &[1.0]), 0.0).is_err());
    }

    #[test]
    fn discretize_pure_integrator() {
        let sys = ContinuousStateSpace::new(m(1, 1, &[0.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let d = discretize(&sys, 0.1).unwrap();
        assert_relative_eq!(d.g()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(d.h()[(0, 0)], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn discretize_first_order_lag() {
        let sys = ContinuousStateSpace::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let d = discretize(&sys, 0.1).unwrap();
        // a^-1 (e^{aT} - 1) b with a = -1
        assert_relative_eq!(d.g()[(0, 0)], (-0.1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(d.h()[(0, 0)], 1.0 - (-0.1f64).exp(), max_relative = 1e-13);
        assert_relative_eq!(d.h()[(0, 0)], 0.095162581964040, epsilon = 1e-14);
    }

    #[test]
    fn discretize_double_integrator_singular_a() {
        let sys = ContinuousStateSpace::new(
            m(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            m(2, 1, &[0.0, 1.0]),
            m(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let d = discretize(&sys, 1.0).unwrap();
        assert_relative_eq!(d.h().clone(), m(2, 1, &[0.5, 1.0]), epsilon = 1e-14);
        assert_relative_eq!(d.g().clone(), m(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn discretize_rejects_nonpositive_period() {
        let sys = ContinuousStateSpace::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        assert_eq!(discretize(&sys, 0.0), Err(LtiError::InvalidSamplePeriod(0.0)));
        assert!(discretize(&sys, -1e-5).is_err());
        assert!(discretize(&sys, f64::NAN).is_err());
    }

    #[test]
    fn continuous_model_validation() {
        let a = DMatrix::zeros(2, 2);
        assert!(matches!(
            ContinuousStateSpace::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2)),
            Err(LtiError::NotSquare { .. })
        ));
        assert!(ContinuousStateSpace::new(a.clone(), DMatrix::zeros(3, 1), DMatrix::zeros(1, 2)).is_err());
        assert!(ContinuousStateSpace::new(a.clone(), DMatrix::zeros(2, 1), DMatrix::zeros(1, 3)).is_err());
        assert_eq!(
            ContinuousStateSpace::new(a.clone(), DMatrix::zeros(2, 1), DMatrix::zeros(2, 2)),
            Err(LtiError::TooFewInputs { inputs: 1, outputs: 2 })
        );
        assert_eq!(
            ContinuousStateSpace::from_parts(
                a.clone(),
                DMatrix::zeros(2, 1),
                DMatrix::zeros(1, 2),
                m(1, 1, &[0.5])
            ),
            Err(LtiError::NonzeroFeedthrough)
        );
        let ok = ContinuousStateSpace::new(a, DMatrix::zeros(2, 1), DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(ok.d(), &DMatrix::zeros(1, 1));
    }

    fn scalar_discrete() -> DiscreteStateSpace {
        DiscreteStateSpace::new(m(1, 1, &[0.9]), m(1, 1, &[0.1]), m(1, 1, &[1.0]), 1.0).unwrap()
    }

    #[test]
    fn step_examples() {
        let sys = scalar_discrete();
        let z = DVector::zeros(1);
        let (x1, y) = sys.step(&z, &z, &z).unwrap();
        assert_eq!((x1[0], y[0]), (0.0, 0.0));

        let one = DVector::from_element(1, 1.0);
        let (x1, y) = sys.step(&one, &one, &z).unwrap();
        assert_relative_eq!(x1[0], 1.0, epsilon = 1e-15);
        assert_eq!(y[0], 1.0);
    }

    #[test]
    fn step_constant_disturbance_offsets_output() {
        let sys = scalar_discrete();
        let d = DVector::from_element(1, 2.5);
        let z = DVector::zeros(1);
        let mut x = DVector::from_element(1, 1.0);
        let mut x_ref = x.clone();
        for _ in 0..20 {
            let (xn, y) = sys.step(&x, &DVector::from_element(1, 0.3), &d).unwrap();
            let (xn_ref, y_ref) = sys.step(&x_ref, &DVector::from_element(1, 0.3), &z).unwrap();
            assert_relative_eq!(y[0] - y_ref[0], 2.5, epsilon = 1e-12);
            x = xn;
            x_ref = xn_ref;
        }
    }

    #[test]
    fn step_rejects_wrong_dimensions() {
        let sys = scalar_discrete();
        let r = sys.step(&DVector::zeros(2), &DVector::zeros(1), &DVector::zeros(1));
        assert!(matches!(r, Err(LtiError::DimensionMismatch { what: "state", .. })));
        let r = sys.step(&DVector::zeros(1), &DVector::zeros(3), &DVector::zeros(1));
        assert!(matches!(r, Err(LtiError::DimensionMismatch { what: "input", .. })));
    }

    #[test]
    fn augment_scalar_example() {
        let aug = augment(&scalar_discrete());
        assert_eq!(aug.gm, m(2, 2, &[0.9, 0.0, 0.9, 1.0]));
        assert_eq!(aug.hm, m(2, 1, &[0.1, 0.1]));
        assert_eq!(aug.cm, m(1, 2, &[0.0, 1.0]));
        let mut eig: Vec<f64> = aug.gm.complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(f64::total_cmp);
        assert_relative_eq!(eig[0], 0.9, epsilon = 1e-14);
        assert_relative_eq!(eig[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn augment_demo_dimensions() {
        let sys = DiscreteStateSpace::new(
            DMatrix::identity(18, 18) * 0.5,
            DMatrix::from_element(18, 3, 0.1),
            DMatrix::from_element(3, 18, 1.0),
            1e-5,
        )
        .unwrap();
        let aug = augment(&sys);
        assert_eq!(aug.gm.shape(), (21, 21));
        assert_eq!(aug.hm.shape(), (21, 3));
        assert_eq!(aug.cm.shape(), (3, 21));
        assert_eq!(aug.cm.view((0, 18), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        assert!(aug.cm.view((0, 0), (3, 18)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn spectral_radius_examples() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            spectral_radius(&m(2, 2, &[0.5, 0.0, 0.0, -0.8])).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        // lambda^2 + 0.25 = 0
        assert_relative_eq!(
            spectral_radius(&m(2, 2, &[0.0, 1.0, -0.25, 0.0])).unwrap(),
            0.5,
            epsilon = 1e-9
        );
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }
}
