//! Small polynomial toolkit: univariate real-root finding and a dense
//! trivariate polynomial type used to expand the epipolar constraints.

mod system;

pub use system::{
    build_system, solve_system, verify_solution, AlgebraicSolution, ConstraintSystem,
};

use nalgebra::{DMatrix, Schur};

/// Accepts a complex root as real when `|Im| / max(1, |Re|)` is below this.
pub const REAL_ROOT_TOLERANCE: f64 = 1e-6;

/// Evaluates `sum c[i] x^i`.
pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn eval_with_derivative(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for c in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// Product of two polynomials in ascending coefficient order.
pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Sum of two polynomials in ascending coefficient order.
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    add(a, &neg)
}

/// Real roots of `sum c[i] x^i`, via the eigenvalues of a balanced
/// companion matrix followed by a few Newton polishing steps.
///
/// Leading coefficients that are negligible relative to the largest one are
/// dropped, so a nominal degree-n input may return fewer roots.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Vec::new();
    }
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1].abs() <= 1e-13 * scale {
        n -= 1;
    }
    if n <= 1 {
        return Vec::new();
    }
    let c = &coeffs[..n];
    let degree = n - 1;

    // Zero roots factor out exactly.
    let zeros = c.iter().take_while(|v| v.abs() <= 1e-300).count();
    let c = &c[zeros..];
    let mut roots = vec![0.0; zeros.min(1)];
    let degree = degree - zeros;
    if degree == 0 {
        return roots;
    }
    if degree == 1 {
        roots.push(-c[0] / c[1]);
        return roots;
    }

    // Substitute x = rho * y so the monic coefficients are balanced.
    let rho = (c[0] / c[degree]).abs().powf(1.0 / degree as f64);
    let rho = if rho.is_finite() && rho > 0.0 { rho } else { 1.0 };
    let lead = c[degree] * rho.powi(degree as i32);
    let mut comp = DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        comp[(i, degree - 1)] = -c[i] * rho.powi(i as i32) / lead;
    }
    let Some(schur) = Schur::try_new(comp, f64::EPSILON, 10_000) else {
        return roots;
    };
    for z in schur.complex_eigenvalues().iter() {
        let (re, im) = (z.re * rho, z.im * rho);
        if !re.is_finite() || im.abs() / re.abs().max(1.0) >= REAL_ROOT_TOLERANCE {
            continue;
        }
        roots.push(polish_root(c, re));
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn polish_root(c: &[f64], mut x: f64) -> f64 {
    let (mut p, _) = eval_with_derivative(c, x);
    for _ in 0..4 {
        let (_, dp) = eval_with_derivative(c, x);
        if dp == 0.0 {
            break;
        }
        let next = x - p / dp;
        let (pn, _) = eval_with_derivative(c, next);
        if !(pn.abs() < p.abs()) {
            break;
        }
        x = next;
        p = pn;
    }
    x
}

/// Dense polynomial in three variables with every exponent at most 3.
///
/// Coefficients are indexed by `a + 4 b + 16 c` for the monomial
/// `x^a y^b z^c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriPoly {
    coeffs: [f64; 64],
}

impl Default for TriPoly {
    fn default() -> Self {
        Self { coeffs: [0.0; 64] }
    }
}

impl TriPoly {
    pub const MAX_EXPONENT: usize = 3;

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(v: f64) -> Self {
        Self::monomial(v, 0, 0, 0)
    }

    pub fn monomial(v: f64, a: usize, b: usize, c: usize) -> Self {
        let mut p = Self::zero();
        p.coeffs[Self::index(a, b, c)] = v;
        p
    }

    /// `c0 + cx x + cy y + cz z`
    pub fn linear(cx: f64, cy: f64, cz: f64, c0: f64) -> Self {
        let mut p = Self::zero();
        p.coeffs[0] = c0;
        p.coeffs[Self::index(1, 0, 0)] = cx;
        p.coeffs[Self::index(0, 1, 0)] = cy;
        p.coeffs[Self::index(0, 0, 1)] = cz;
        p
    }

    fn index(a: usize, b: usize, c: usize) -> usize {
        assert!(a <= 3 && b <= 3 && c <= 3, "exponent out of range");
        a + 4 * b + 16 * c
    }

    pub fn coeff(&self, a: usize, b: usize, c: usize) -> f64 {
        self.coeffs[Self::index(a, b, c)]
    }

    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        let pw = |v: f64| [1.0, v, v * v, v * v * v];
        let (px, py, pz) = (pw(x), pw(y), pw(z));
        let mut s = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c != 0.0 {
                s += c * px[i & 3] * py[(i >> 2) & 3] * pz[i >> 4];
            }
        }
        s
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// Product; panics if any exponent of a nonzero term would exceed 3.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                if *b == 0.0 {
                    continue;
                }
                let e = [(i & 3) + (j & 3), ((i >> 2) & 3) + ((j >> 2) & 3), (i >> 4) + (j >> 4)];
                out.coeffs[Self::index(e[0], e[1], e[2])] += a * b;
            }
        }
        out
    }
}

impl std::ops::Add for TriPoly {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.coeffs.iter_mut().zip(rhs.coeffs.iter()).for_each(|(a, b)| *a += b);
        self
    }
}

impl std::ops::Sub for TriPoly {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.coeffs.iter_mut().zip(rhs.coeffs.iter()).for_each(|(a, b)| *a -= b);
        self
    }
}

/// 3x3 matrix of polynomials, used to expand matrix identities symbolically.
pub type PolyMat3 = [[TriPoly; 3]; 3];

pub fn polymat_mul(a: &PolyMat3, b: &PolyMat3) -> PolyMat3 {
    let mut out = [[TriPoly::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] = out[i][j] + a[i][k].mul(&b[k][j]);
            }
        }
    }
    out
}

pub fn polymat_transpose(a: &PolyMat3) -> PolyMat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn polymat_det(a: &PolyMat3) -> TriPoly {
    let m = |i: usize, j: usize, k: usize, l: usize| a[i][j].mul(&a[k][l]);
    a[0][0].mul(&(m(1, 1, 2, 2) - m(1, 2, 2, 1))) - a[0][1].mul(&(m(1, 0, 2, 2) - m(1, 2, 2, 0)))
        + a[0][2].mul(&(m(1, 0, 2, 1) - m(1, 1, 2, 0)))
}
