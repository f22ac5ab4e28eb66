//! Closed-form analysis of the data-induced objective field.
//!
//! Under best response to data, agent `x`'s update direction depends only on
//! its own parameter and on the moments of the partner's stored actions, so
//! the field `grad J` decouples into two univariate polynomials. Fixed points
//! of the named games follow in closed form; custom games are solved per
//! agent with damped Newton.

use std::io::Write;

use thiserror::Error;

use crate::datasets::DatasetStats;
use crate::learner::{BrudObjective, JointPolicy, LearnError};
use crate::polygame::{build_game, GameError, GameSpec, Polynomial2, TwinPeaksParams};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("moments up to power {needed} required, stats carry {available}")]
    InsufficientMoments { needed: usize, available: usize },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("fixed-point solver failed: {0}")]
    Unsupported(String),
    #[error("optimum check failed: {0}")]
    VerificationFailed(String),
}

impl From<LearnError> for AnalysisError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::InsufficientMoments { needed, available } => {
                AnalysisError::InsufficientMoments { needed, available }
            }
            other => AnalysisError::Unsupported(other.to_string()),
        }
    }
}

/// Exact data-induced field at a policy point.
pub fn brud_field(
    poly: &Polynomial2,
    stats: &DatasetStats,
    at: (f64, f64),
) -> Result<(f64, f64), AnalysisError> {
    Ok(BrudObjective::new(poly).exact_gradient(&JointPolicy::new(at.0, at.1), stats)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointClass {
    UniqueFixedPoint,
    NoFiniteFixedPoint,
    LineOfFixedPoints,
    ConstantField,
}

/// Which parameter is free along a line of fixed points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedLine {
    /// Every `theta_x` is stationary; `theta_y` must equal the value.
    AnyX { theta_y: f64 },
    /// Every `theta_y` is stationary; `theta_x` must equal the value.
    AnyY { theta_x: f64 },
}

#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub classification: FixedPointClass,
    /// Present exactly for `UniqueFixedPoint`. For custom games this is the
    /// root the solver reached, not a proof of uniqueness.
    pub point: Option<(f64, f64)>,
    pub line: Option<FixedLine>,
    /// Constant field that is zero everywhere: every policy is stationary.
    pub zero_field: bool,
    objective: BrudObjective,
    stats: DatasetStats,
}

impl FixedPointReport {
    pub fn field_at(&self, a_x: f64, a_y: f64) -> (f64, f64) {
        self.objective
            .exact_gradient(&JointPolicy::new(a_x, a_y), &self.stats)
            .expect("moments were checked when the report was built")
    }

    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }
}

/// Classifies the stationary set of the data-induced field.
pub fn brud_fixed_point(spec: &GameSpec, stats: &DatasetStats) -> Result<FixedPointReport, AnalysisError> {
    let poly = build_game(spec)?;
    let objective = BrudObjective::new(&poly);
    // surfaces missing moments early
    objective.exact_gradient(&JointPolicy::new(0.0, 0.0), stats)?;

    let report = |classification, point, line, zero_field| FixedPointReport {
        classification,
        point,
        line,
        zero_field,
        objective: objective.clone(),
        stats: stats.clone(),
    };

    Ok(match spec {
        GameSpec::Decoupled => report(FixedPointClass::ConstantField, None, None, false),
        GameSpec::SignAgreement => {
            if stats.mean_x == 0.0 && stats.mean_y == 0.0 {
                report(FixedPointClass::ConstantField, None, None, true)
            } else {
                report(FixedPointClass::NoFiniteFixedPoint, None, None, false)
            }
        }
        GameSpec::ActionAgreement => report(
            FixedPointClass::UniqueFixedPoint,
            Some((stats.mean_y, stats.mean_x)),
            None,
            false,
        ),
        GameSpec::TwinPeaks(p) => {
            let x = twin_peaks_fixed_coordinate(p, stats.mean_y, stats.moments_y[2]);
            let y = twin_peaks_fixed_coordinate(p, stats.mean_x, stats.moments_x[2]);
            report(FixedPointClass::UniqueFixedPoint, Some((x, y)), None, false)
        }
        GameSpec::Custom(_) => {
            let (class, point, line, zero) = solve_decoupled(&objective, stats)?;
            report(class, point, line, zero)
        }
    })
}

/// `C m / (2A + 2B E[a^2])`, the stationary parameter of one agent given its
/// partner's data mean `m` and second raw moment.
pub fn twin_peaks_fixed_coordinate(p: &TwinPeaksParams, partner_mean: f64, partner_second_moment: f64) -> f64 {
    p.c * partner_mean / (2.0 * p.a + 2.0 * p.b * partner_second_moment)
}

/// Classification, point, line and zero-field flag, as in [`FixedPointReport`].
pub type NumericSolution = (FixedPointClass, Option<(f64, f64)>, Option<FixedLine>, bool);

/// Stationary structure computed numerically for an arbitrary surface.
/// Exposed so the closed forms of the named games can be cross-checked.
pub fn solve_fixed_point_numeric(
    poly: &Polynomial2,
    stats: &DatasetStats,
) -> Result<NumericSolution, AnalysisError> {
    let objective = BrudObjective::new(poly);
    objective.exact_gradient(&JointPolicy::new(0.0, 0.0), stats)?;
    solve_decoupled(&objective, stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Component {
    Zero,
    Constant,
    Root(f64),
}

fn solve_decoupled(
    objective: &BrudObjective,
    stats: &DatasetStats,
) -> Result<NumericSolution, AnalysisError> {
    // coefficient k of each univariate field component multiplies theta^k
    let cx = univariate_x(objective.d_dx(), &stats.moments_y);
    let cy = univariate_y(objective.d_dy(), &stats.moments_x);
    let gx = solve_component(&cx, stats.mean_y)?;
    let gy = solve_component(&cy, stats.mean_x)?;
    use Component::*;
    Ok(match (gx, gy) {
        (Zero, Zero) => (FixedPointClass::ConstantField, None, None, true),
        (Zero | Constant, Zero | Constant) => (FixedPointClass::ConstantField, None, None, false),
        (Constant, _) | (_, Constant) => (FixedPointClass::NoFiniteFixedPoint, None, None, false),
        (Zero, Root(y)) => (
            FixedPointClass::LineOfFixedPoints,
            None,
            Some(FixedLine::AnyX { theta_y: y }),
            false,
        ),
        (Root(x), Zero) => (
            FixedPointClass::LineOfFixedPoints,
            None,
            Some(FixedLine::AnyY { theta_x: x }),
            false,
        ),
        (Root(x), Root(y)) => (FixedPointClass::UniqueFixedPoint, Some((x, y)), None, false),
    })
}

fn univariate_x(d_dx: &Polynomial2, moments_y: &[f64]) -> Vec<f64> {
    (0..=d_dx.deg_x())
        .map(|i| (0..=d_dx.effective_deg_y()).map(|j| d_dx.coeff(i, j) * moments_y[j]).sum())
        .collect()
}

fn univariate_y(d_dy: &Polynomial2, moments_x: &[f64]) -> Vec<f64> {
    (0..=d_dy.deg_y())
        .map(|j| (0..=d_dy.effective_deg_x()).map(|i| d_dy.coeff(i, j) * moments_x[i]).sum())
        .collect()
}

fn eval_uni(c: &[f64], t: f64) -> (f64, f64) {
    // value and derivative together
    let mut v = 0.0;
    let mut d = 0.0;
    for &a in c.iter().rev() {
        d = d * t + v;
        v = v * t + a;
    }
    (v, d)
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 200;

fn solve_component(coeffs: &[f64], hint: f64) -> Result<Component, AnalysisError> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut c = coeffs.to_vec();
    while c.len() > 1 && c.last().is_some_and(|a| a.abs() <= 1e-14 * scale) {
        c.pop();
    }
    if c.len() == 1 {
        return Ok(if c[0] == 0.0 || c[0].abs() <= 1e-14 * scale {
            Component::Zero
        } else {
            Component::Constant
        });
    }
    for start in [hint, 0.0, 1.0, -1.0, 2.0, -2.0] {
        if let Some(root) = damped_newton(&c, start, scale) {
            return Ok(Component::Root(root));
        }
    }
    Err(AnalysisError::Unsupported(format!(
        "no root of the field component with coefficients {c:?} was found"
    )))
}

fn damped_newton(c: &[f64], start: f64, scale: f64) -> Option<f64> {
    let mut t = start;
    let (mut v, mut d) = eval_uni(c, t);
    for _ in 0..NEWTON_MAX_ITERS {
        if v.abs() <= NEWTON_TOL * scale.max(1.0) {
            return Some(t);
        }
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let full = v / d;
        let mut lambda = 1.0;
        loop {
            let cand = t - lambda * full;
            let (cv, cd) = eval_uni(c, cand);
            if cv.abs() < v.abs() || lambda < 1e-9 {
                let moved = (cand - t).abs();
                t = cand;
                v = cv;
                d = cd;
                if moved <= NEWTON_TOL * (1.0 + t.abs()) && v.abs() <= 1e-9 * scale.max(1.0) {
                    return Some(t);
                }
                break;
            }
            lambda *= 0.5;
        }
    }
    (v.abs() <= NEWTON_TOL * scale.max(1.0)).then_some(t)
}

/// True joint maxima of twin peaks sit at `(a, a)` and `(-a, -a)` with
/// `a = sqrt((C - 2A) / 2B)`. Returns `(a, -a)` after checking the gradient
/// vanishes and the Hessian is negative definite there.
pub fn true_optima_twin_peaks(p: &TwinPeaksParams) -> Result<(f64, f64), AnalysisError> {
    p.validate()?;
    let a = ((p.c - 2.0 * p.a) / (2.0 * p.b)).sqrt();
    let poly = build_game(&GameSpec::TwinPeaks(*p))?;
    let (rx, ry) = (poly.partial_x(), poly.partial_y());
    let (rxx, rxy, ryy) = (rx.partial_x(), rx.partial_y(), ry.partial_y());
    for t in [a, -a] {
        let g = (rx.eval(t, t), ry.eval(t, t));
        let tol = 1e-9 * (p.a + p.b + p.c);
        if g.0.abs() > tol || g.1.abs() > tol {
            return Err(AnalysisError::VerificationFailed(format!(
                "gradient {g:?} at ({t}, {t}) is not zero"
            )));
        }
        let (hxx, hxy, hyy) = (rxx.eval(t, t), rxy.eval(t, t), ryy.eval(t, t));
        if !(hxx < 0.0 && hxx * hyy - hxy * hxy > 0.0) {
            return Err(AnalysisError::VerificationFailed(format!(
                "Hessian [[{hxx}, {hxy}], [{hxy}, {hyy}]] at ({t}, {t}) is not negative definite"
            )));
        }
    }
    Ok((a, -a))
}

/// Real standard deviations that make offline learning land on a true
/// twin-peaks optimum, one per sign branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaBranches {
    pub plus: Option<f64>,
    pub minus: Option<f64>,
}

/// For a partner-data mean `m`, solves `sigma^2 = -m^2 +/- k m - A/B` with
/// `k = C / sqrt(2B(C - 2A))`. Radicands within rounding of zero count as
/// zero. Returns `None` when neither branch is real.
pub fn sigma_condition(p: &TwinPeaksParams, mean_y: f64) -> Result<Option<SigmaBranches>, AnalysisError> {
    p.validate()?;
    let k = p.c / (2.0 * p.b * (p.c - 2.0 * p.a)).sqrt();
    let base = -mean_y * mean_y - p.a / p.b;
    let tol = 1e-12 * (mean_y * mean_y + (k * mean_y).abs() + p.a / p.b);
    let branch = |r: f64| (r >= -tol).then(|| r.max(0.0).sqrt());
    let plus = branch(base + k * mean_y);
    let minus = branch(base - k * mean_y);
    Ok((plus.is_some() || minus.is_some()).then_some(SigmaBranches { plus, minus }))
}

/// One point of a vector-field grid: the data-induced field and the true
/// reward gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub a_x: f64,
    pub a_y: f64,
    pub d_j: (f64, f64),
    pub d_r: (f64, f64),
}

pub const FIELD_CSV_HEADER: &str = "a_x,a_y,dJx,dJy,dRx,dRy";

/// Samples both fields on an `n x n` grid over `[low, high]^2`, row-major in
/// `a_y` then `a_x`.
pub fn field_grid(
    poly: &Polynomial2,
    stats: &DatasetStats,
    low: f64,
    high: f64,
    n: usize,
) -> Result<Vec<FieldSample>, AnalysisError> {
    let objective = BrudObjective::new(poly);
    let coord = |k: usize| {
        if n <= 1 {
            0.5 * (low + high)
        } else {
            low + (high - low) * k as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (coord(c), coord(r));
            let d_j = objective.exact_gradient(&JointPolicy::new(x, y), stats)?;
            let d_r = (objective.d_dx().eval(x, y), objective.d_dy().eval(x, y));
            out.push(FieldSample { a_x: x, a_y: y, d_j, d_r });
        }
    }
    Ok(out)
}

pub fn write_field_csv<W: Write>(grid: &[FieldSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{FIELD_CSV_HEADER}")?;
    for s in grid {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.a_x, s.a_y, s.d_j.0, s.d_j.1, s.d_r.0, s.d_r.1
        )?;
    }
    out.flush()
}
