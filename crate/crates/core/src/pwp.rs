//! Exact algebra over piecewise-polynomial functions of one real variable.
//!
//! A [`PwpFunction`] is a mesh of strictly increasing finite breakpoints plus one
//! polynomial coefficient row per subdomain. The first and last subdomains extend
//! implicitly to -inf/+inf. Everything here is exact up to floating point: sums
//! merge meshes, composition with a piecewise-linear activation solves for kink
//! crossings analytically, and global minimization enumerates per-subdomain
//! stationary points of quadratics.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PwpError {
    #[error("mesh must be a strictly increasing list of finite breakpoints")]
    InvalidMesh,
    #[error("expected {expected} coefficient rows, got {got}")]
    RowCountMismatch { expected: usize, got: usize },
    #[error("coefficient row {row} has {got} entries, expected {expected}")]
    RowWidthMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite coefficient")]
    NonFiniteCoefficient,
    #[error("non-finite input {0}")]
    NonFiniteInput(f64),
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("empty function list")]
    EmptyList,
    #[error("degree {0} is not supported by this operation")]
    UnsupportedDegree(usize),
    #[error("inner function must be piecewise linear (degree 1)")]
    NotPiecewiseLinear,
    #[error("function is unbounded below")]
    UnboundedBelow,
    #[error("activation pieces are discontinuous at kink {0}")]
    DiscontinuousActivation(usize),
    #[error("invalid activation description")]
    InvalidActivation,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Relative breakpoint dedup tolerance.
fn mesh_eps(at: f64) -> f64 {
    1e-12 * at.abs().max(1.0)
}

fn poly_eval(row: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in row.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Sums `values` in a fixed order regardless of how the caller collected them.
fn order_independent_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// A piecewise polynomial with `mesh.len() + 1` subdomains of degree `degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwpFunction {
    degree: usize,
    mesh: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

/// Result of a global minimization over a piecewise quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinResult {
    pub argmin: f64,
    pub min_value: f64,
    pub subdomain_index: usize,
}

impl PwpFunction {
    pub fn new(degree: usize, mesh: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self, PwpError> {
        if mesh.iter().any(|b| !b.is_finite()) {
            return Err(PwpError::InvalidMesh);
        }
        for pair in mesh.windows(2) {
            if pair[1] - pair[0] <= mesh_eps(pair[0]) {
                return Err(PwpError::InvalidMesh);
            }
        }
        if coeffs.len() != mesh.len() + 1 {
            return Err(PwpError::RowCountMismatch {
                expected: mesh.len() + 1,
                got: coeffs.len(),
            });
        }
        for (row, cs) in coeffs.iter().enumerate() {
            if cs.len() != degree + 1 {
                return Err(PwpError::RowWidthMismatch {
                    row,
                    expected: degree + 1,
                    got: cs.len(),
                });
            }
            if cs.iter().any(|c| !c.is_finite()) {
                return Err(PwpError::NonFiniteCoefficient);
            }
        }
        Ok(PwpFunction {
            degree,
            mesh,
            coeffs,
        })
    }

    /// Single-subdomain affine function `b + a*theta`.
    pub fn affine_of(a: f64, b: f64) -> Result<Self, PwpError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(PwpError::NonFiniteInput(if a.is_finite() { b } else { a }));
        }
        Self::new(1, Vec::new(), vec![vec![b, a]])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn num_subdomains(&self) -> usize {
        self.coeffs.len()
    }

    /// Index of the subdomain containing `x`, half-open-right: a breakpoint
    /// belongs to the subdomain to its right.
    pub fn subdomain_index(&self, x: f64) -> usize {
        self.mesh.partition_point(|&b| b <= x)
    }

    pub fn eval(&self, x: f64) -> Result<f64, PwpError> {
        if !x.is_finite() {
            return Err(PwpError::NonFiniteInput(x));
        }
        Ok(poly_eval(&self.coeffs[self.subdomain_index(x)], x))
    }

    /// Returns `a*f + b` on the same mesh.
    pub fn scale_add(&self, a: f64, b: f64) -> Result<Self, PwpError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(PwpError::NonFiniteInput(if a.is_finite() { b } else { a }));
        }
        let coeffs = self
            .coeffs
            .iter()
            .map(|row| {
                let mut out: Vec<f64> = row.iter().map(|c| c * a).collect();
                out[0] += b;
                out
            })
            .collect();
        Self::new(self.degree, self.mesh.clone(), coeffs)
    }

    /// `(y - f)^2` for piecewise-linear `f`; the result is piecewise quadratic
    /// on the same mesh.
    pub fn square_residual(y: f64, f: &PwpFunction) -> Result<Self, PwpError> {
        if f.degree != 1 {
            return Err(PwpError::NotPiecewiseLinear);
        }
        if !y.is_finite() {
            return Err(PwpError::NonFiniteInput(y));
        }
        let coeffs = f
            .coeffs
            .iter()
            .map(|row| {
                let (b, a) = (row[0], row[1]);
                let d = y - b;
                vec![d * d, -2.0 * a * d, a * a]
            })
            .collect();
        Self::new(2, f.mesh.clone(), coeffs)
    }

    /// Global minimum of a piecewise quadratic (degree <= 2).
    ///
    /// Per subdomain the candidates are the finite endpoints and, for convex
    /// pieces, the interior vertex. A tail decreasing toward its infinity is
    /// reported as unbounded. Ties within a relative tolerance are broken
    /// toward `hint`, then toward the smallest argmin, so flat messages leave
    /// the parameter where it is.
    pub fn global_min(&self, hint: f64) -> Result<MinResult, PwpError> {
        if self.degree > 2 {
            return Err(PwpError::UnsupportedDegree(self.degree));
        }
        if !hint.is_finite() {
            return Err(PwpError::NonFiniteInput(hint));
        }
        let first = &self.coeffs[0];
        let is_constant = first[1..].iter().all(|&c| c == 0.0)
            && self.coeffs.iter().all(|row| row == first);
        if is_constant {
            return Ok(MinResult {
                argmin: hint,
                min_value: first[0],
                subdomain_index: self.subdomain_index(hint),
            });
        }

        let n = self.coeffs.len();
        let mut candidates: Vec<(f64, f64, usize)> = Vec::new();
        for (r, row) in self.coeffs.iter().enumerate() {
            let c1 = row.get(1).copied().unwrap_or(0.0);
            let c2 = row.get(2).copied().unwrap_or(0.0);
            let lo = if r == 0 {
                f64::NEG_INFINITY
            } else {
                self.mesh[r - 1]
            };
            let hi = if r == n - 1 {
                f64::INFINITY
            } else {
                self.mesh[r]
            };
            if r == 0 && (c2 < 0.0 || (c2 == 0.0 && c1 > 0.0)) {
                return Err(PwpError::UnboundedBelow);
            }
            if r == n - 1 && (c2 < 0.0 || (c2 == 0.0 && c1 < 0.0)) {
                return Err(PwpError::UnboundedBelow);
            }
            if lo.is_finite() {
                candidates.push((lo, poly_eval(row, lo), r));
            }
            if hi.is_finite() {
                candidates.push((hi, poly_eval(row, hi), r));
            }
            if c2 > 0.0 {
                let v = -c1 / (2.0 * c2);
                if v > lo && v < hi {
                    candidates.push((v, poly_eval(row, v), r));
                }
            }
        }
        let best = candidates
            .iter()
            .map(|&(_, v, _)| v)
            .fold(f64::INFINITY, f64::min);
        let eps_tie = 1e-10 * best.abs().max(1.0);
        let chosen = candidates
            .iter()
            .filter(|&&(_, v, _)| v <= best + eps_tie)
            .min_by(|a, b| {
                (a.0 - hint)
                    .abs()
                    .total_cmp(&(b.0 - hint).abs())
                    .then(a.0.total_cmp(&b.0))
            })
            .expect("non-constant bounded-below quadratic has at least one candidate");
        Ok(MinResult {
            argmin: chosen.0,
            min_value: chosen.1,
            subdomain_index: chosen.2,
        })
    }

    /// Debug text form: header `Q R`, then the breakpoints, then R coefficient
    /// rows. 17 significant digits, so the round trip is exact.
    pub fn to_debug_text(&self) -> String {
        let mut out = format!("{} {}\n", self.degree, self.coeffs.len());
        let mesh_line: Vec<String> = self.mesh.iter().map(|b| format!("{:.16e}", b)).collect();
        out.push_str(&mesh_line.join(" "));
        out.push('\n');
        for row in &self.coeffs {
            let cells: Vec<String> = row.iter().map(|c| format!("{:.16e}", c)).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_debug_text(text: &str) -> Result<Self, PwpError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| PwpError::Parse("empty input".into()))?;
        let mut parts = header.split_whitespace();
        let degree: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| PwpError::Parse("bad header".into()))?;
        let rows: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| PwpError::Parse("bad header".into()))?;
        let parse_line = |line: &str| -> Result<Vec<f64>, PwpError> {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| PwpError::Parse(format!("{t:?}: {e}")))
                })
                .collect()
        };
        let mesh = parse_line(lines.next().unwrap_or(""))?;
        if mesh.len() + 1 != rows {
            return Err(PwpError::Parse("breakpoint count does not match R".into()));
        }
        let mut coeffs = Vec::with_capacity(rows);
        for _ in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| PwpError::Parse("missing coefficient row".into()))?;
            coeffs.push(parse_line(line)?);
        }
        Self::new(degree, mesh, coeffs)
    }
}

/// Exact pointwise sum of piecewise polynomials of a common degree.
///
/// Mirrors the delta-coefficient merge: every breakpoint carries the jump in
/// coefficients across it; all records are sorted, coincident breakpoints are
/// merged with their deltas added, and the coefficient rows are recovered by a
/// prefix sum seeded with the sum of the leftmost rows. All reductions run in
/// a sorted order, so the output is bit-identical under permutation of `fs`.
pub fn sum_pwp(fs: &[PwpFunction]) -> Result<PwpFunction, PwpError> {
    let first = fs.first().ok_or(PwpError::EmptyList)?;
    let degree = first.degree;
    let width = degree + 1;
    for f in fs {
        if f.degree != degree {
            return Err(PwpError::DegreeMismatch(degree, f.degree));
        }
    }

    let mut records: Vec<(f64, Vec<f64>)> = Vec::new();
    for f in fs {
        for (i, &bp) in f.mesh.iter().enumerate() {
            let delta: Vec<f64> = (0..width)
                .map(|q| f.coeffs[i + 1][q] - f.coeffs[i][q])
                .collect();
            records.push((bp, delta));
        }
    }
    records.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            for (x, y) in a.1.iter().zip(&b.1) {
                let ord = x.total_cmp(y);
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        })
    });

    let mut base = Vec::with_capacity(width);
    for q in 0..width {
        base.push(order_independent_sum(
            fs.iter().map(|f| f.coeffs[0][q]).collect(),
        ));
    }

    let mut mesh = Vec::new();
    let mut coeffs = vec![base];
    let mut i = 0;
    while i < records.len() {
        let bp = records[i].0;
        let mut j = i + 1;
        while j < records.len() && records[j].0 - bp <= mesh_eps(bp) {
            j += 1;
        }
        let mut row = coeffs.last().unwrap().clone();
        for rec in &records[i..j] {
            for q in 0..width {
                row[q] += rec.1[q];
            }
        }
        mesh.push(bp);
        coeffs.push(row);
        i = j;
    }
    PwpFunction::new(degree, mesh, coeffs)
}

/// A continuous piecewise-linear activation described by its kinks.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlActivation {
    kinks: Vec<f64>,
    slopes: Vec<f64>,
    kink_values: Vec<f64>,
}

impl PwlActivation {
    pub fn new(kinks: Vec<f64>, slopes: Vec<f64>, kink_values: Vec<f64>) -> Result<Self, PwpError> {
        if kinks.is_empty()
            || slopes.len() != kinks.len() + 1
            || kink_values.len() != kinks.len()
            || kinks.iter().any(|k| !k.is_finite())
            || slopes.iter().any(|s| !s.is_finite())
            || kink_values.iter().any(|v| !v.is_finite())
        {
            return Err(PwpError::InvalidActivation);
        }
        if kinks.windows(2).any(|p| p[1] <= p[0]) {
            return Err(PwpError::InvalidActivation);
        }
        // Continuity: interior pieces must interpolate adjacent kink values.
        for i in 1..kinks.len() {
            let predicted = kink_values[i - 1] + slopes[i] * (kinks[i] - kinks[i - 1]);
            let scale = kink_values[i].abs().max(1.0);
            if (predicted - kink_values[i]).abs() > 1e-9 * scale {
                return Err(PwpError::DiscontinuousActivation(i));
            }
        }
        Ok(PwlActivation {
            kinks,
            slopes,
            kink_values,
        })
    }

    /// Identity on [-1, 1], slope `alpha` outside, continuous.
    pub fn leaky_hard_tanh(alpha: f64) -> Self {
        PwlActivation::new(vec![-1.0, 1.0], vec![alpha, 1.0, alpha], vec![-1.0, 1.0])
            .expect("leaky hard-tanh description is valid")
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    fn piece_index(&self, x: f64) -> usize {
        self.kinks.partition_point(|&k| k <= x)
    }

    /// `(slope, intercept)` of piece `i`, anchored at its nearest kink.
    pub fn piece_affine(&self, i: usize) -> (f64, f64) {
        let anchor = if i == 0 { 0 } else { i - 1 };
        let slope = self.slopes[i];
        let intercept = self.kink_values[anchor] - slope * self.kinks[anchor];
        (slope, intercept)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (s, t) = self.piece_affine(self.piece_index(x));
        s * x + t
    }

    /// Slope of the piece containing `x` (right piece at a kink).
    pub fn slope_at(&self, x: f64) -> f64 {
        self.slopes[self.piece_index(x)]
    }
}

/// Composition `act(inner)` of a PWL activation with a PWL function.
///
/// New breakpoints are the analytic solutions of `inner(theta) = kink` inside
/// each subdomain of `inner`; on each refined subdomain the composition is a
/// single affine piece recovered from the activation piece active there.
pub fn compose_activation(
    act: &PwlActivation,
    inner: &PwpFunction,
) -> Result<PwpFunction, PwpError> {
    if inner.degree != 1 {
        return Err(PwpError::NotPiecewiseLinear);
    }
    let n = inner.num_subdomains();
    let mut breaks: Vec<f64> = inner.mesh.clone();
    for r in 0..n {
        let (b, a) = (inner.coeffs[r][0], inner.coeffs[r][1]);
        if a == 0.0 {
            continue;
        }
        let lo = if r == 0 {
            f64::NEG_INFINITY
        } else {
            inner.mesh[r - 1]
        };
        let hi = if r == n - 1 {
            f64::INFINITY
        } else {
            inner.mesh[r]
        };
        for &k in &act.kinks {
            let root = (k - b) / a;
            if root.is_finite() && root > lo && root < hi {
                breaks.push(root);
            }
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    // Near-coincident breakpoints collapse into one; the sliver they would
    // delimit has no measure.
    breaks.dedup_by(|next, kept| *next - *kept <= mesh_eps(*kept));

    let reps: Vec<f64> = (0..=breaks.len())
        .map(|r| {
            if breaks.is_empty() {
                0.0
            } else if r == 0 {
                breaks[0] - 1.0
            } else if r == breaks.len() {
                breaks[r - 1] + 1.0
            } else {
                0.5 * (breaks[r - 1] + breaks[r])
            }
        })
        .collect();
    let coeffs = reps
        .iter()
        .map(|&rep| {
            let row = &inner.coeffs[inner.subdomain_index(rep)];
            let (b, a) = (row[0], row[1]);
            let (s, t) = act.piece_affine(act.piece_index(a * rep + b));
            vec![s * b + t, s * a]
        })
        .collect();
    PwpFunction::new(1, breaks, coeffs)
}
