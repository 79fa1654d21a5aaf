//! Pairwise-distance constraint systems in the depth-correction unknowns.
//!
//! For two sample points `j, k` seen in image `i` with 2D coordinates `x`
//! (normalized, or centered pixels in the focal modes) and raw depths `d`,
//! the squared 3D distance after correcting the depth by `beta` is
//!
//! ```text
//! omega * q(beta) + e,   q(beta) = |(d_j x_j - d_k x_k) + beta (x_j - x_k)|^2,
//! e = (d_j - d_k)^2
//! ```
//!
//! where `omega = 1/f^2` (one in calibrated mode). Rigidity equates the
//! distance in image 1 with `gamma = alpha^2` times the one in image 2.
//! Unknowns are solved in a normalized frame (depths divided by their RMS
//! per image, pixels by a common scale) and mapped back on return.

use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector3, Vector4};

use super::{add, eval, mul, real_roots, sub};
use crate::error::{Error, Result};
use crate::geom::Mode;

/// Coefficients of one pair equation, normalized units:
/// `[A1, B1, C1, e1, A2, B2, C2, e2]` with `q(beta) = A beta^2 + B beta + C`.
type Row = [f64; 8];

/// Polynomial system for one minimal sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    mode: Mode,
    rows: Vec<Row>,
    depth_scale1: f64,
    depth_scale2: f64,
    pixel_scale: f64,
}

/// One real solution in the caller's units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraicSolution {
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub omega1: Option<f64>,
    pub omega2: Option<f64>,
}

/// Normalized unknowns, always carrying both omegas (one in calibrated mode).
#[derive(Debug, Clone, Copy)]
struct Unknowns {
    beta1: f64,
    beta2: f64,
    gamma: f64,
    omega1: f64,
    omega2: f64,
}

impl ConstraintSystem {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of equations (3, 4 or 5 by mode).
    pub fn num_equations(&self) -> usize {
        self.rows.len()
    }

    /// Point pairs whose distance equations make up the system.
    pub fn pairs(mode: Mode) -> &'static [(usize, usize)] {
        match mode {
            Mode::Calibrated => &[(0, 1), (0, 2), (1, 2)],
            Mode::SharedFocal => &[(0, 1), (0, 2), (0, 3), (1, 2)],
            Mode::TwoFocal => &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)],
        }
    }

    fn normalize(&self, sol: &AlgebraicSolution) -> Unknowns {
        let s2 = self.pixel_scale * self.pixel_scale;
        Unknowns {
            beta1: sol.beta1 / self.depth_scale1,
            beta2: sol.beta2 / self.depth_scale2,
            gamma: sol.gamma * (self.depth_scale2 / self.depth_scale1).powi(2),
            omega1: sol.omega1.map_or(1.0, |w| w * s2),
            omega2: sol.omega2.map_or(1.0, |w| w * s2),
        }
    }

    fn denormalize(&self, u: &Unknowns) -> AlgebraicSolution {
        let s2 = self.pixel_scale * self.pixel_scale;
        let focal = self.mode.has_focals();
        AlgebraicSolution {
            beta1: u.beta1 * self.depth_scale1,
            beta2: u.beta2 * self.depth_scale2,
            gamma: u.gamma * (self.depth_scale1 / self.depth_scale2).powi(2),
            omega1: focal.then(|| u.omega1 / s2),
            omega2: focal.then(|| u.omega2 / s2),
        }
    }
}

/// Expands the pairwise-distance equations for a minimal sample.
///
/// `points` are 2D coordinates: normalized camera coordinates in calibrated
/// mode, pixel coordinates relative to the principal point otherwise.
/// Needs 3 points (calibrated) or 4 (focal modes); extra points are ignored.
pub fn build_system(
    points1: &[Vector2<f64>],
    points2: &[Vector2<f64>],
    d1: &[f64],
    d2: &[f64],
    mode: Mode,
) -> Result<ConstraintSystem> {
    let m = mode.depth_sample_size();
    let got = points1.len().min(points2.len()).min(d1.len()).min(d2.len());
    if got < m {
        return Err(Error::TooFewCorrespondences { needed: m, got });
    }
    let (points1, points2, d1, d2) = (&points1[..m], &points2[..m], &d1[..m], &d2[..m]);
    let all_finite = points1.iter().chain(points2).all(|p| p.iter().all(|v| v.is_finite()))
        && d1.iter().chain(d2).all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::Degenerate("non-finite sample"));
    }

    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let depth_scale1 = rms(d1);
    let depth_scale2 = rms(d2);
    let pixel_scale = if mode.has_focals() {
        let sq: f64 = points1.iter().chain(points2).map(|p| p.norm_squared()).sum();
        (sq / (2 * m) as f64).sqrt()
    } else {
        1.0
    };
    if !(depth_scale1 > 0.0 && depth_scale2 > 0.0 && pixel_scale > 0.0) {
        return Err(Error::Degenerate("vanishing depth or coordinate spread"));
    }

    let image_coeffs = |x: &[Vector2<f64>], d: &[f64], ds: f64, j: usize, k: usize| {
        let (xj, xk) = (x[j] / pixel_scale, x[k] / pixel_scale);
        let (dj, dk) = (d[j] / ds, d[k] / ds);
        let dx = xj - xk;
        let w = xj * dj - xk * dk;
        [dx.norm_squared(), 2.0 * dx.dot(&w), w.norm_squared(), (dj - dk) * (dj - dk)]
    };

    let mut rows = Vec::with_capacity(5);
    for &(j, k) in ConstraintSystem::pairs(mode) {
        let a = image_coeffs(points1, d1, depth_scale1, j, k);
        let b = image_coeffs(points2, d2, depth_scale2, j, k);
        // A pair whose lifted distance vanishes for every correction carries
        // no information (coincident pixels with equal depth).
        if a[0] + a[3] < 1e-24 || b[0] + b[3] < 1e-24 {
            return Err(Error::Degenerate("coincident sample points"));
        }
        rows.push([a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]]);
    }
    Ok(ConstraintSystem {
        mode,
        rows,
        depth_scale1,
        depth_scale2,
        pixel_scale,
    })
}

/// All real solutions of the system, Newton-polished and mapped back to
/// the caller's units. No sign or positivity filtering is applied.
pub fn solve_system(sys: &ConstraintSystem) -> Result<Vec<AlgebraicSolution>> {
    let raw = match sys.mode {
        Mode::Calibrated => solve_parabola_family(sys, false)?,
        Mode::TwoFocal => solve_parabola_family(sys, true)?,
        Mode::SharedFocal => solve_shared(sys)?,
    };
    Ok(raw
        .into_iter()
        .map(|u| polish(sys, u))
        .filter(|u| [u.beta1, u.beta2, u.gamma, u.omega1, u.omega2].iter().all(|v| v.is_finite()))
        .map(|u| sys.denormalize(&u))
        .collect())
}

/// Largest relative residual `|lhs - rhs| / (|lhs| + |rhs|)` over the
/// system's equations.
pub fn verify_solution(sys: &ConstraintSystem, sol: &AlgebraicSolution) -> f64 {
    let u = sys.normalize(sol);
    sys.rows
        .iter()
        .map(|r| {
            let (lhs, rhs) = sides(r, &u);
            let den = lhs.abs() + rhs.abs();
            if den > 0.0 {
                (lhs - rhs).abs() / den
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

fn quad(a: f64, b: f64, c: f64, x: f64) -> f64 {
    (a * x + b) * x + c
}

fn sides(r: &Row, u: &Unknowns) -> (f64, f64) {
    let lhs = u.omega1 * quad(r[0], r[1], r[2], u.beta1) + r[3];
    let rhs = u.gamma * (u.omega2 * quad(r[4], r[5], r[6], u.beta2) + r[7]);
    (lhs, rhs)
}

/// Null space (columns) of a wide matrix, smallest singular values last in
/// the SVD ordering. Fails when the matrix loses row rank.
fn null_space(m: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    let mut sq = DMatrix::<f64>::zeros(cols, cols);
    sq.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Degenerate("svd failed"))?;
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[order[0]];
    let s_rank = svd.singular_values[order[rows - 1]];
    if !(smax > 0.0) || s_rank < 1e-11 * smax {
        return Err(Error::Degenerate("rank-deficient constraint matrix"));
    }
    let mut n = DMatrix::<f64>::zeros(cols, dim);
    for (c, &i) in order[cols - dim..].iter().enumerate() {
        n.set_column(c, &v_t.row(i).transpose());
    }
    Ok(n)
}

/// Calibrated and two-focal systems: the monomial vector lies in a 3D null
/// space and obeys one linear and two quadratic constraints, which reduce to
/// a quartic in `beta1`.
///
/// Calibrated monomials: `[b1^2, b1, 1, g b2^2, g b2, g]`.
/// Two-focal monomials: `[b1^2, b1, 1, mu1, k b2^2, k b2, k, nu]` with
/// `mu1 = 1/w1`, `k = g w2/w1`, `nu = g/w1`.
fn solve_parabola_family(sys: &ConstraintSystem, two_focal: bool) -> Result<Vec<Unknowns>> {
    let cols = if two_focal { 8 } else { 6 };
    let mut m = DMatrix::<f64>::zeros(sys.rows.len(), cols);
    for (i, r) in sys.rows.iter().enumerate() {
        let row: Vec<f64> = if two_focal {
            vec![r[0], r[1], r[2], r[3], -r[4], -r[5], -r[6], -r[7]]
        } else {
            vec![r[0], r[1], r[2] + r[3], -r[4], -r[5], -(r[6] + r[7])]
        };
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    let n = null_space(&m, 3)?;
    // (square1, linear1, one, square2, linear2, const2)
    let [sq1, lin1, one, sq2, lin2, c2] = if two_focal { [0, 1, 2, 4, 5, 6] } else { [0, 1, 2, 3, 4, 5] };

    // Change of basis so that X = G (1, u, v) with X[one] = 1, X[lin1] = u.
    let r_one = Vector3::new(n[(one, 0)], n[(one, 1)], n[(one, 2)]);
    let r_lin = Vector3::new(n[(lin1, 0)], n[(lin1, 1)], n[(lin1, 2)]);
    let w = r_one.cross(&r_lin);
    let t = nalgebra::Matrix3::from_rows(&[r_one.transpose(), r_lin.transpose(), w.transpose()]);
    let t_inv = t.try_inverse().ok_or(Error::Degenerate("singular parametrization"))?;
    let g = &n * DMatrix::from_column_slice(3, 3, t_inv.as_slice());

    let gs = [g[(sq1, 0)], g[(sq1, 1)], g[(sq1, 2)]];
    let gscale = gs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(gs[2].abs() > 1e-12 * gscale.max(1e-300)) {
        return Err(Error::Degenerate("degenerate parabola"));
    }
    // v(u) from X[sq1] = u^2.
    let v_of_u = [-gs[0] / gs[2], -gs[1] / gs[2], 1.0 / gs[2]];
    let x_of_u = |k: usize| add(&add(&[g[(k, 0)]], &[0.0, g[(k, 1)]]), &v_of_u.map(|c| c * g[(k, 2)]));
    let lhs = mul(&x_of_u(sq2), &x_of_u(c2));
    let rhs = mul(&x_of_u(lin2), &x_of_u(lin2));
    let quartic = sub(&lhs, &rhs);
    check_finite_solution_set(&quartic, &[&lhs, &rhs])?;

    let mut out = Vec::new();
    for u in real_roots(&quartic) {
        let v = eval(&v_of_u, u);
        let x: Vec<f64> = (0..cols).map(|k| g[(k, 0)] + g[(k, 1)] * u + g[(k, 2)] * v).collect();
        let sol = if two_focal {
            let (mu1, kappa, nu) = (x[3], x[6], x[7]);
            if mu1 == 0.0 || kappa == 0.0 || nu == 0.0 {
                continue;
            }
            Unknowns {
                beta1: u,
                beta2: x[5] / kappa,
                gamma: nu / mu1,
                omega1: 1.0 / mu1,
                omega2: kappa / nu,
            }
        } else {
            if x[5] == 0.0 {
                continue;
            }
            Unknowns {
                beta1: u,
                beta2: x[4] / x[5],
                gamma: x[5],
                omega1: 1.0,
                omega2: 1.0,
            }
        };
        out.push(sol);
    }
    Ok(out)
}

/// Shared-focal system `P W1 = g Q W2` with `W = (b^2, b, 1, mu)`, `mu = 1/w`.
/// Eliminating `g` and `mu` leaves a degree-8 resultant in one shift.
fn solve_shared(sys: &ConstraintSystem) -> Result<Vec<Unknowns>> {
    let p = Matrix4::from_fn(|i, j| sys.rows[i][j]);
    let q = Matrix4::from_fn(|i, j| sys.rows[i][4 + j]);
    let cond = |m: &Matrix4<f64>| {
        let s = m.singular_values();
        let (mx, mn) = (s.max(), s.min());
        if mn > 0.0 {
            mx / mn
        } else {
            f64::INFINITY
        }
    };
    let (cp, cq) = (cond(&p), cond(&q));
    if !(cp.min(cq) < 1e12) {
        return Err(Error::Degenerate("singular shared-focal coefficients"));
    }
    // Invert the better-conditioned side; the other side's shift becomes the
    // univariate unknown.
    let swapped = cq < cp;
    let h = if swapped {
        q.try_inverse().ok_or(Error::Degenerate("singular shared-focal coefficients"))? * p
    } else {
        p.try_inverse().ok_or(Error::Degenerate("singular shared-focal coefficients"))? * q
    };

    // g_i(b) = h_i0 b^2 + h_i1 b + h_i2, ascending coefficients.
    let gpoly = |i: usize| [h[(i, 2)], h[(i, 1)], h[(i, 0)]];
    let (g0, g1, g2, g3) = (gpoly(0), gpoly(1), gpoly(2), gpoly(3));
    let (h03, h13, h23, h33) = (h[(0, 3)], h[(1, 3)], h[(2, 3)], h[(3, 3)]);

    let a2 = vec![h23];
    let a1 = sub(&g2, &[h33]);
    let a0: Vec<f64> = g3.iter().map(|c| -c).collect();
    let b2 = vec![h13 * h13 - h03 * h23];
    let b1 = sub(&sub(&g1.map(|c| 2.0 * h13 * c), &g0.map(|c| c * h23)), &g2.map(|c| c * h03));
    let b0 = sub(&mul(&g1, &g1), &mul(&g0, &g2));

    let r1 = sub(&mul(&a2, &b0), &mul(&a0, &b2));
    let r2 = sub(&mul(&a2, &b1), &mul(&a1, &b2));
    let r3 = sub(&mul(&a1, &b0), &mul(&a0, &b1));
    let (lhs, rhs) = (mul(&r1, &r1), mul(&r2, &r3));
    let resultant = sub(&lhs, &rhs);
    check_finite_solution_set(&resultant, &[&lhs, &rhs])?;

    let mut out = Vec::new();
    for b in real_roots(&resultant) {
        let (a2v, a1v, a0v) = (a2[0], eval(&a1, b), eval(&a0, b));
        let (b2v, b1v, b0v) = (b2[0], eval(&b1, b), eval(&b0, b));
        let den = b2v * a1v - a2v * b1v;
        if den == 0.0 {
            continue;
        }
        let mu = (a2v * b0v - b2v * a0v) / den;
        let wr = Vector4::new(b * b, b, 1.0, mu);
        let inv_g = h.row(2).dot(&wr.transpose());
        if inv_g == 0.0 {
            continue;
        }
        let g = 1.0 / inv_g;
        let other = g * h.row(1).dot(&wr.transpose());
        let omega = 1.0 / mu;
        out.push(if swapped {
            Unknowns { beta1: b, beta2: other, gamma: 1.0 / g, omega1: omega, omega2: omega }
        } else {
            Unknowns { beta1: other, beta2: b, gamma: g, omega1: omega, omega2: omega }
        });
    }
    Ok(out)
}

/// A univariate eliminant that cancels to rounding noise means the sample
/// admits a continuum of solutions (e.g. zero baseline with identical views).
fn check_finite_solution_set(poly: &[f64], parts: &[&[f64]]) -> Result<()> {
    let amax = |p: &[f64]| p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let scale = parts.iter().map(|p| amax(p)).fold(0.0, f64::max);
    if amax(poly) <= 1e-10 * scale {
        return Err(Error::Degenerate("solution set is not finite"));
    }
    Ok(())
}

/// Newton iterations on the square system; a step is kept only if it
/// lowers the residual norm.
fn polish(sys: &ConstraintSystem, mut u: Unknowns) -> Unknowns {
    let n = sys.rows.len();
    let residual = |u: &Unknowns| {
        DVector::from_iterator(
            n,
            sys.rows.iter().map(|r| {
                let (l, rh) = sides(r, u);
                l - rh
            }),
        )
    };
    let mut f = residual(&u);
    for _ in 0..3 {
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for (i, r) in sys.rows.iter().enumerate() {
            let q1 = quad(r[0], r[1], r[2], u.beta1);
            let q2 = quad(r[4], r[5], r[6], u.beta2);
            let dq1 = 2.0 * r[0] * u.beta1 + r[1];
            let dq2 = 2.0 * r[4] * u.beta2 + r[5];
            let mut row = vec![u.omega1 * dq1, -u.gamma * u.omega2 * dq2, -(u.omega2 * q2 + r[7])];
            match sys.mode {
                Mode::Calibrated => {}
                Mode::SharedFocal => row.push(q1 - u.gamma * q2),
                Mode::TwoFocal => {
                    row.push(q1);
                    row.push(-u.gamma * q2);
                }
            }
            for (j, v) in row.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        let Some(step) = jac.lu().solve(&f) else {
            break;
        };
        let mut next = u;
        next.beta1 -= step[0];
        next.beta2 -= step[1];
        next.gamma -= step[2];
        match sys.mode {
            Mode::Calibrated => {}
            Mode::SharedFocal => {
                next.omega1 -= step[3];
                next.omega2 = next.omega1;
            }
            Mode::TwoFocal => {
                next.omega1 -= step[3];
                next.omega2 -= step[4];
            }
        }
        let fn_next = residual(&next);
        if !(fn_next.norm() < f.norm()) {
            break;
        }
        u = next;
        f = fn_next;
    }
    u
}
