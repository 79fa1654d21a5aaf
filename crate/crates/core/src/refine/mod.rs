//! Joint least-squares refinement of a hypothesis on its inliers.
//!
//! The cost is
//! `sum_{I1} |fwd|^2 + sum_{I2} |bwd|^2 + w sum_{I3} sampson`, with
//! `w = 2 lambda_s tau_r^2 / tau_s^2` (the same weight as in scoring), minimized
//! by Levenberg-Marquardt. Rotation is updated on the manifold
//! (`R <- exp([d]x) R`), `alpha` and focal lengths in log space. Jacobians come
//! from forward-mode dual numbers.

mod jet;

pub use jet::{Jet, Scalar};

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};

use crate::geom::{AffineCorrection, CameraModel, Correspondence, DepthModel, ErrorThresholds, Hypothesis, Mode, Pose};
use crate::ransac::InlierMasks;

/// Number of refinement parameters:
/// `[rotation tangent (3), t (3), log alpha, beta1, beta2, log f1, log f2]`.
pub const NUM_PARAMS: usize = 11;
const P_ALPHA: usize = 6;
const P_BETA1: usize = 7;
const P_BETA2: usize = 8;
const P_F1: usize = 9;
const P_F2: usize = 10;

/// Which residual families enter the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualTerms {
    pub forward: bool,
    pub backward: bool,
    pub epipolar: bool,
}

impl ResidualTerms {
    pub const HYBRID: Self = Self { forward: true, backward: true, epipolar: true };
    pub const DEPTH: Self = Self { forward: true, backward: true, epipolar: false };
    pub const POINT: Self = Self { forward: false, backward: false, epipolar: true };
    /// Image-1 points with their priors reprojected into image 2 only.
    pub const FORWARD: Self = Self { forward: true, backward: false, epipolar: false };
}

/// Data, inlier sets and settings of one refinement.
#[derive(Debug, Clone)]
pub struct RefinementProblem<'a> {
    pub data: &'a [Correspondence],
    pub masks: &'a InlierMasks,
    pub initial: Hypothesis,
    pub cam1: CameraModel,
    pub cam2: CameraModel,
    pub thresholds: ErrorThresholds,
    pub mode: Mode,
    pub terms: ResidualTerms,
    /// Which depth-correction parameters are free.
    pub depth_model: DepthModel,
}

/// Outcome of [`refine`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub hypothesis: Hypothesis,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// True when the initial cost could not be evaluated and the initial
    /// hypothesis was returned unchanged.
    pub diverged: bool,
}

/// Maximum LM iterations per call.
pub const MAX_ITERATIONS: usize = 25;
/// Relative cost decrease below which iteration stops.
pub const FUNCTION_TOLERANCE: f64 = 1e-10;

struct Model<T> {
    r: [[T; 3]; 3],
    t: [T; 3],
    alpha: T,
    beta1: T,
    beta2: T,
    f1: T,
    f2: T,
}

fn mat_vec<T: Scalar>(m: &[[T; 3]; 3], v: &[T; 3]) -> [T; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn mat_t_vec<T: Scalar>(m: &[[T; 3]; 3], v: &[T; 3]) -> [T; 3] {
    [0, 1, 2].map(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

impl<'a> RefinementProblem<'a> {
    fn has_depth_terms(&self) -> bool {
        (self.terms.forward && self.masks.type1.iter().any(|&b| b)) || (self.terms.backward && self.masks.type2.iter().any(|&b| b))
    }

    fn sampson_weight(&self) -> f64 {
        if self.terms.epipolar {
            self.thresholds.sampson_weight()
        } else {
            0.0
        }
    }

    /// Parameters held fixed.
    fn frozen(&self) -> [bool; NUM_PARAMS] {
        let mut f = [false; NUM_PARAMS];
        match self.mode {
            Mode::Calibrated => {
                f[P_F1] = true;
                f[P_F2] = true;
            }
            Mode::SharedFocal => f[P_F2] = true,
            Mode::TwoFocal => {}
        }
        if self.depth_model != DepthModel::Affine {
            f[P_BETA1] = true;
            f[P_BETA2] = true;
        }
        if self.depth_model == DepthModel::Fixed || !self.has_depth_terms() {
            f[P_ALPHA] = true;
            f[P_BETA1] = true;
            f[P_BETA2] = true;
        }
        f
    }

    fn focals(&self, h: &Hypothesis) -> (f64, f64) {
        (h.focal1.unwrap_or(self.cam1.focal()), h.focal2.unwrap_or(self.cam2.focal()))
    }

    /// Evaluates all residuals into `out`; returns false if a lifted or
    /// transferred point lies behind a camera.
    fn eval<T: Scalar>(&self, m: &Model<T>, out: &mut Vec<T>) -> bool {
        let (pp1, pp2) = (self.cam1.principal_point(), self.cam2.principal_point());
        let mut valid = true;
        if self.terms.forward || self.terms.backward {
            for (i, c) in self.data.iter().enumerate() {
                if self.terms.forward && self.masks.type1[i] {
                    let d = T::cst(c.d1) + m.beta1;
                    let x = [(T::cst(c.p1.x - pp1.x) / m.f1) * d, (T::cst(c.p1.y - pp1.y) / m.f1) * d, d];
                    let y = mat_vec(&m.r, &x);
                    let y = [y[0] + m.t[0], y[1] + m.t[1], y[2] + m.t[2]];
                    valid &= d.value() > 0.0 && y[2].value() > 0.0;
                    out.push(m.f2 * y[0] / y[2] + T::cst(pp2.x - c.p2.x));
                    out.push(m.f2 * y[1] / y[2] + T::cst(pp2.y - c.p2.y));
                }
                if self.terms.backward && self.masks.type2[i] {
                    let d = m.alpha * (T::cst(c.d2) + m.beta2);
                    let y = [(T::cst(c.p2.x - pp2.x) / m.f2) * d - m.t[0], (T::cst(c.p2.y - pp2.y) / m.f2) * d - m.t[1], d - m.t[2]];
                    let x = mat_t_vec(&m.r, &y);
                    valid &= d.value() > 0.0 && x[2].value() > 0.0;
                    out.push(m.f1 * x[0] / x[2] + T::cst(pp1.x - c.p1.x));
                    out.push(m.f1 * x[1] / x[2] + T::cst(pp1.y - c.p1.y));
                }
            }
        }
        let w = self.sampson_weight();
        if w > 0.0 {
            let sw = T::cst(w.sqrt());
            // E = [t]x R
            let t = &m.t;
            let tx = [[T::cst(0.0), -t[2], t[1]], [t[2], T::cst(0.0), -t[0]], [-t[1], t[0], T::cst(0.0)]];
            let mut e = [[T::cst(0.0); 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    e[i][j] = tx[i][0] * m.r[0][j] + tx[i][1] * m.r[1][j] + tx[i][2] * m.r[2][j];
                }
            }
            for (i, c) in self.data.iter().enumerate() {
                if !self.masks.type3[i] {
                    continue;
                }
                // Sampson distance of the pixel coordinates to F = K2^-T E K1^-1.
                let x1 = [T::cst(c.p1.x - pp1.x) / m.f1, T::cst(c.p1.y - pp1.y) / m.f1, T::cst(1.0)];
                let x2 = [T::cst(c.p2.x - pp2.x) / m.f2, T::cst(c.p2.y - pp2.y) / m.f2, T::cst(1.0)];
                let ex1 = mat_vec(&e, &x1);
                let etx2 = mat_t_vec(&e, &x2);
                let num = x2[0] * ex1[0] + x2[1] * ex1[1] + x2[2] * ex1[2];
                let a = ex1[0] * ex1[0] + ex1[1] * ex1[1];
                let b = etx2[0] * etx2[0] + etx2[1] * etx2[1];
                let den = a / (m.f2 * m.f2) + b / (m.f1 * m.f1);
                if den.value() > 0.0 {
                    out.push(num / den.sqrt() * sw);
                } else {
                    valid = false;
                    out.push(T::cst(0.0));
                }
            }
        }
        valid
    }

    fn model_f64(&self, h: &Hypothesis) -> Model<f64> {
        let r = h.pose.rotation();
        let t = h.pose.translation();
        let (f1, f2) = self.focals(h);
        Model {
            r: [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[(i, j)])),
            t: [t.x, t.y, t.z],
            alpha: h.affine.alpha,
            beta1: h.affine.beta1,
            beta2: h.affine.beta2,
            f1,
            f2,
        }
    }

    /// Dual-number model at the parameter origin of `h`.
    fn model_jet(&self, h: &Hypothesis) -> Model<Jet<NUM_PARAMS>> {
        type J = Jet<NUM_PARAMS>;
        let frozen = self.frozen();
        let var = |v: f64, i: usize| if frozen[i] { J::constant(v) } else { J::variable(v, i) };
        let r0 = h.pose.rotation();
        let d = [var(0.0, 0), var(0.0, 1), var(0.0, 2)];
        let zero = J::constant(0.0);
        // (I + [d]x) R0, exact to first order at d = 0.
        let dx = [[zero, -d[2], d[1]], [d[2], zero, -d[0]], [-d[1], d[0], zero]];
        let mut r = [[zero; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = J::constant(r0[(i, j)]);
                for k in 0..3 {
                    s = s + dx[i][k] * J::constant(r0[(k, j)]);
                }
                r[i][j] = s;
            }
        }
        let t = h.pose.translation();
        let (f1, f2) = self.focals(h);
        let lf1 = var(f1.ln(), P_F1).exp();
        let lf2 = if self.mode == Mode::SharedFocal { lf1 } else { var(f2.ln(), P_F2).exp() };
        Model {
            r,
            t: [var(t.x, 3), var(t.y, 4), var(t.z, 5)],
            alpha: var(h.affine.alpha.ln(), P_ALPHA).exp(),
            beta1: var(h.affine.beta1, P_BETA1),
            beta2: var(h.affine.beta2, P_BETA2),
            f1: lf1,
            f2: lf2,
        }
    }

    /// Hypothesis at parameter offset `delta` from `h`.
    pub fn apply(&self, h: &Hypothesis, delta: &[f64; NUM_PARAMS]) -> Hypothesis {
        let frozen = self.frozen();
        let dp = |i: usize| if frozen[i] { 0.0 } else { delta[i] };
        let rot = Rotation3::new(Vector3::new(dp(0), dp(1), dp(2)));
        let r = rot.matrix() * h.pose.rotation();
        let mut t = h.pose.translation() + Vector3::new(dp(3), dp(4), dp(5));
        if !self.has_depth_terms() {
            // Without depth terms the translation scale is a gauge freedom.
            let n0 = h.pose.translation().norm();
            let n = t.norm();
            if n > 0.0 && n0 > 0.0 {
                t *= n0 / n;
            }
        }
        let pose = Pose::from_approx(&r, t).unwrap_or(h.pose);
        let affine = AffineCorrection::new(
            h.affine.alpha * dp(P_ALPHA).exp(),
            h.affine.beta1 + dp(P_BETA1),
            h.affine.beta2 + dp(P_BETA2),
        );
        let (focal1, focal2) = match self.mode {
            Mode::Calibrated => (h.focal1, h.focal2),
            Mode::SharedFocal => {
                let f = h.focal1.map(|f| f * dp(P_F1).exp());
                (f, f)
            }
            Mode::TwoFocal => (h.focal1.map(|f| f * dp(P_F1).exp()), h.focal2.map(|f| f * dp(P_F2).exp())),
        };
        Hypothesis { pose, affine, focal1, focal2 }
    }

    /// Residual vector at `h`; `None` if a point falls behind a camera.
    pub fn residuals(&self, h: &Hypothesis) -> Option<DVector<f64>> {
        let mut out = Vec::new();
        let valid = self.eval(&self.model_f64(h), &mut out);
        valid.then(|| DVector::from_vec(out))
    }

    /// Squared residual norm, `+inf` when invalid.
    pub fn cost(&self, h: &Hypothesis) -> f64 {
        self.residuals(h).map_or(f64::INFINITY, |r| r.norm_squared())
    }

    /// Residuals and their Jacobian with respect to the parameter offset at
    /// `h`. Frozen parameters have zero columns.
    pub fn jacobian(&self, h: &Hypothesis) -> (DVector<f64>, DMatrix<f64>) {
        let mut out = Vec::new();
        self.eval(&self.model_jet(h), &mut out);
        let r = DVector::from_iterator(out.len(), out.iter().map(|j| j.v));
        let jac = DMatrix::from_fn(out.len(), NUM_PARAMS, |i, k| out[i].d[k]);
        (r, jac)
    }
}

/// Residuals of `theta` on the problem's inlier sets (see module docs).
pub fn residuals(theta: &Hypothesis, prob: &RefinementProblem) -> DVector<f64> {
    let mut out = Vec::new();
    prob.eval(&prob.model_f64(theta), &mut out);
    DVector::from_vec(out)
}

/// Levenberg-Marquardt on the problem's cost, starting at `prob.initial`.
/// Only cost-decreasing steps are taken, so the returned cost never exceeds
/// the initial one.
pub fn refine(prob: &RefinementProblem) -> Refinement {
    let initial_cost = prob.cost(&prob.initial);
    let mut out = Refinement {
        hypothesis: prob.initial,
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
        diverged: false,
    };
    if !initial_cost.is_finite() {
        out.diverged = true;
        return out;
    }
    let frozen = prob.frozen();
    let free: Vec<usize> = (0..NUM_PARAMS).filter(|&i| !frozen[i]).collect();
    let mut h = prob.initial;
    let mut cost = initial_cost;
    let mut mu = 1e-4;

    for iter in 0..MAX_ITERATIONS {
        if cost == 0.0 {
            break;
        }
        let (r, j) = prob.jacobian(&h);
        let jf = j.select_columns(free.iter());
        let jtj = jf.transpose() * &jf;
        let g = jf.transpose() * &r;
        let mut accepted = None;
        while mu < 1e16 {
            let mut a = jtj.clone();
            for k in 0..free.len() {
                a[(k, k)] += mu * (jtj[(k, k)] + 1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 10.0;
                continue;
            };
            let mut delta = [0.0; NUM_PARAMS];
            for (k, &i) in free.iter().enumerate() {
                delta[i] = step[k];
            }
            let trial = prob.apply(&h, &delta);
            let c = prob.cost(&trial);
            if c < cost {
                accepted = Some((trial, c));
                mu = (mu / 3.0).max(1e-12);
                break;
            }
            mu *= 4.0;
        }
        let Some((trial, c)) = accepted else {
            break;
        };
        let rel = (cost - c) / cost;
        h = trial;
        cost = c;
        out.iterations = iter + 1;
        if rel < FUNCTION_TOLERANCE {
            break;
        }
    }
    out.hypothesis = h;
    out.final_cost = cost;
    out
}

/// Central finite-difference Jacobian of the residuals with respect to the
/// parameter offset; used to validate [`RefinementProblem::jacobian`].
pub fn numeric_jacobian(prob: &RefinementProblem, h: &Hypothesis, step: f64) -> DMatrix<f64> {
    let base = residuals(h, prob);
    let frozen = prob.frozen();
    let mut jac = DMatrix::zeros(base.len(), NUM_PARAMS);
    for k in 0..NUM_PARAMS {
        if frozen[k] {
            continue;
        }
        let mut dp = [0.0; NUM_PARAMS];
        dp[k] = step;
        let plus = residuals(&prob.apply(h, &dp), prob);
        dp[k] = -step;
        let minus = residuals(&prob.apply(h, &dp), prob);
        jac.set_column(k, &((plus - minus) / (2.0 * step)));
    }
    jac
}
