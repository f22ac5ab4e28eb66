//! Two-player polynomial games.
//!
//! A game is a shared reward `R(a_x, a_y) = sum_ij c_ij a_x^i a_y^j` stored as a
//! dense `(m+1) x (n+1)` coefficient matrix. The four named games used in the
//! experiments are built through [`GameSpec`].

use std::fmt;
use std::ops::Add;

use thiserror::Error;

/// Largest per-variable degree accepted for a polynomial.
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid twin-peaks parameters A={a}, B={b}, C={c}: need A > 0, B > 0, C > 2A")]
    InvalidParams { a: f64, b: f64, c: f64 },
    #[error("coefficient matrix has {got} entries, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("degree ({deg_x}, {deg_y}) exceeds the maximum of {MAX_DEGREE}")]
    DegreeTooLarge { deg_x: usize, deg_y: usize },
    #[error("coefficient c[{i}][{j}] is not finite")]
    NonFinite { i: usize, j: usize },
}

/// Bivariate polynomial with a dense coefficient matrix.
///
/// `coeff(i, j)` multiplies `a_x^i a_y^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial2 {
    deg_x: usize,
    deg_y: usize,
    // row-major: index i * (deg_y + 1) + j
    coeffs: Vec<f64>,
}

impl Polynomial2 {
    pub fn new(deg_x: usize, deg_y: usize, coeffs: Vec<f64>) -> Result<Self, GameError> {
        if deg_x > MAX_DEGREE || deg_y > MAX_DEGREE {
            return Err(GameError::DegreeTooLarge { deg_x, deg_y });
        }
        let expected = (deg_x + 1) * (deg_y + 1);
        if coeffs.len() != expected {
            return Err(GameError::ShapeMismatch {
                got: coeffs.len(),
                expected,
            });
        }
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(GameError::NonFinite {
                i: k / (deg_y + 1),
                j: k % (deg_y + 1),
            });
        }
        Ok(Self {
            deg_x,
            deg_y,
            coeffs,
        })
    }

    pub fn zeros(deg_x: usize, deg_y: usize) -> Self {
        Self {
            deg_x,
            deg_y,
            coeffs: vec![0.0; (deg_x + 1) * (deg_y + 1)],
        }
    }

    /// Builds a polynomial from `(i, j, c)` triples. Repeated `(i, j)` pairs accumulate.
    pub fn from_terms(terms: &[(usize, usize, f64)]) -> Result<Self, GameError> {
        let deg_x = terms.iter().map(|t| t.0).max().unwrap_or(0);
        let deg_y = terms.iter().map(|t| t.1).max().unwrap_or(0);
        if deg_x > MAX_DEGREE || deg_y > MAX_DEGREE {
            return Err(GameError::DegreeTooLarge { deg_x, deg_y });
        }
        let mut poly = Self::zeros(deg_x, deg_y);
        for &(i, j, c) in terms {
            if !c.is_finite() {
                return Err(GameError::NonFinite { i, j });
            }
            let k = poly.index(i, j);
            poly.coeffs[k] += c;
        }
        Ok(poly)
    }

    /// Non-zero coefficients as `(i, j, c)` triples in row-major order.
    pub fn terms(&self) -> Vec<(usize, usize, f64)> {
        (0..=self.deg_x)
            .flat_map(|i| (0..=self.deg_y).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.coeff(i, j)))
            .filter(|t| t.2 != 0.0)
            .collect()
    }

    pub fn deg_x(&self) -> usize {
        self.deg_x
    }

    pub fn deg_y(&self) -> usize {
        self.deg_y
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        i * (self.deg_y + 1) + j
    }

    /// Coefficient of `a_x^i a_y^j`; zero outside the stored degrees.
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i > self.deg_x || j > self.deg_y {
            0.0
        } else {
            self.coeffs[self.index(i, j)]
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        let start = i * (self.deg_y + 1);
        &self.coeffs[start..start + self.deg_y + 1]
    }

    /// Evaluates the polynomial as the mean of the two nested-Horner orders
    /// (outer `a_x`, outer `a_y`). A symmetric matrix then gives a value that
    /// is exactly invariant under swapping the arguments.
    pub fn eval(&self, a_x: f64, a_y: f64) -> f64 {
        let outer_x = (0..=self.deg_x)
            .rev()
            .fold(0.0, |acc, i| acc * a_x + horner(self.row(i), a_y));
        let outer_y = (0..=self.deg_y).rev().fold(0.0, |acc, j| {
            let col = (0..=self.deg_x).rev().fold(0.0, |c, i| c * a_x + self.coeff(i, j));
            acc * a_y + col
        });
        0.5 * (outer_x + outer_y)
    }

    /// Exact partial derivative with respect to `a_x`.
    pub fn partial_x(&self) -> Self {
        if self.deg_x == 0 {
            return Self::zeros(0, self.deg_y);
        }
        let mut out = Self::zeros(self.deg_x - 1, self.deg_y);
        for i in 1..=self.deg_x {
            for j in 0..=self.deg_y {
                let k = out.index(i - 1, j);
                out.coeffs[k] = i as f64 * self.coeff(i, j);
            }
        }
        out
    }

    /// Exact partial derivative with respect to `a_y`.
    pub fn partial_y(&self) -> Self {
        if self.deg_y == 0 {
            return Self::zeros(self.deg_x, 0);
        }
        let mut out = Self::zeros(self.deg_x, self.deg_y - 1);
        for i in 0..=self.deg_x {
            for j in 1..=self.deg_y {
                let k = out.index(i, j - 1);
                out.coeffs[k] = j as f64 * self.coeff(i, j);
            }
        }
        out
    }

    /// `(dR/da_x, dR/da_y)` at a point.
    pub fn true_gradient(&self, a_x: f64, a_y: f64) -> (f64, f64) {
        (
            self.partial_x().eval(a_x, a_y),
            self.partial_y().eval(a_x, a_y),
        )
    }

    /// Highest power of `a_x` with a non-zero coefficient.
    pub fn effective_deg_x(&self) -> usize {
        (0..=self.deg_x)
            .rev()
            .find(|&i| self.row(i).iter().any(|&c| c != 0.0))
            .unwrap_or(0)
    }

    /// Highest power of `a_y` with a non-zero coefficient.
    pub fn effective_deg_y(&self) -> usize {
        (0..=self.deg_y)
            .rev()
            .find(|&j| (0..=self.deg_x).any(|i| self.coeff(i, j) != 0.0))
            .unwrap_or(0)
    }

    /// Expectation of `p(a_x, Y)` over `Y` given raw moments `E[Y^j]`.
    ///
    /// `moments_y` must cover every power up to `effective_deg_y`.
    pub fn expect_over_y(&self, a_x: f64, moments_y: &[f64]) -> f64 {
        debug_assert!(moments_y.len() > self.effective_deg_y());
        (0..=self.deg_x).rev().fold(0.0, |acc, i| {
            let row: f64 = self
                .row(i)
                .iter()
                .zip(moments_y)
                .map(|(c, m)| c * m)
                .sum();
            acc * a_x + row
        })
    }

    /// Expectation of `p(X, a_y)` over `X` given raw moments `E[X^i]`.
    pub fn expect_over_x(&self, moments_x: &[f64], a_y: f64) -> f64 {
        debug_assert!(moments_x.len() > self.effective_deg_x());
        (0..=self.effective_deg_x())
            .map(|i| moments_x[i] * horner(self.row(i), a_y))
            .sum()
    }

    /// True when the matrix equals its transpose, i.e. `R(x, y) == R(y, x)`.
    pub fn is_symmetric(&self) -> bool {
        let d = self.deg_x.max(self.deg_y);
        (0..=d).all(|i| (0..=d).all(|j| self.coeff(i, j) == self.coeff(j, i)))
    }
}

fn horner(row: &[f64], t: f64) -> f64 {
    row.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

impl Add for &Polynomial2 {
    type Output = Polynomial2;

    fn add(self, rhs: &Polynomial2) -> Polynomial2 {
        let mut out = Polynomial2::zeros(self.deg_x.max(rhs.deg_x), self.deg_y.max(rhs.deg_y));
        for i in 0..=out.deg_x {
            for j in 0..=out.deg_y {
                let k = out.index(i, j);
                out.coeffs[k] = self.coeff(i, j) + rhs.coeff(i, j);
            }
        }
        out
    }
}

impl fmt::Display for Polynomial2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = self.terms();
        if terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (i, j, c)) in terms.into_iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            match i {
                0 => {}
                1 => write!(f, "*x")?,
                _ => write!(f, "*x^{i}")?,
            }
            match j {
                0 => {}
                1 => write!(f, "*y")?,
                _ => write!(f, "*y^{j}")?,
            }
        }
        Ok(())
    }
}

/// Twin-peaks shape parameters for `R = -A(x^2 + y^2) - B(xy)^2 + Cxy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinPeaksParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TwinPeaksParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GameError> {
        let p = Self { a, b, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let Self { a, b, c } = *self;
        if a > 0.0 && b > 0.0 && c > 2.0 * a && c.is_finite() && b.is_finite() {
            Ok(())
        } else {
            Err(GameError::InvalidParams { a, b, c })
        }
    }
}

impl Default for TwinPeaksParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 4.0,
            c: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameKind {
    Decoupled,
    SignAgreement,
    ActionAgreement,
    TwinPeaks,
    Custom,
}

/// Named game plus whatever parameters it needs.
#[derive(Debug, Clone, PartialEq)]
pub enum GameSpec {
    /// `R = a_x + a_y`
    Decoupled,
    /// `R = a_x a_y`
    SignAgreement,
    /// `R = -(a_x - a_y)^2`
    ActionAgreement,
    TwinPeaks(TwinPeaksParams),
    Custom(Polynomial2),
}

impl GameSpec {
    pub fn kind(&self) -> GameKind {
        match self {
            GameSpec::Decoupled => GameKind::Decoupled,
            GameSpec::SignAgreement => GameKind::SignAgreement,
            GameSpec::ActionAgreement => GameKind::ActionAgreement,
            GameSpec::TwinPeaks(_) => GameKind::TwinPeaks,
            GameSpec::Custom(_) => GameKind::Custom,
        }
    }

    pub fn build(&self) -> Result<Polynomial2, GameError> {
        build_game(self)
    }
}

/// Realizes a [`GameSpec`] as a coefficient matrix.
pub fn build_game(spec: &GameSpec) -> Result<Polynomial2, GameError> {
    let terms: Vec<(usize, usize, f64)> = match spec {
        GameSpec::Decoupled => vec![(1, 0, 1.0), (0, 1, 1.0)],
        GameSpec::SignAgreement => vec![(1, 1, 1.0)],
        // -(x - y)^2 = -x^2 + 2xy - y^2
        GameSpec::ActionAgreement => vec![(2, 0, -1.0), (1, 1, 2.0), (0, 2, -1.0)],
        GameSpec::TwinPeaks(p) => {
            p.validate()?;
            vec![(2, 0, -p.a), (0, 2, -p.a), (2, 2, -p.b), (1, 1, p.c)]
        }
        GameSpec::Custom(poly) => return Ok(poly.clone()),
    };
    Polynomial2::from_terms(&terms)
}
