//! Third-level weight assignment: the value-function constraint estimate,
//! the closed-form descent direction of the constrained QP, the simplex
//! projection and the KKT diagnostics.

use crate::error::{Error, Result};
use crate::net::ParamVector;

pub const DEFAULT_BETA: f64 = 0.5;
/// Below this `‖∇g̃‖` the multiplier falls back to zero.
pub const DEFAULT_FALLBACK_NORM: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;

/// A vector over the joint variable: task-weight block and encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector {
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
}

impl JointVector {
    pub fn new(w: Vec<f64>, theta: Vec<f64>) -> Self {
        JointVector { w, theta }
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        JointVector {
            w: vec![0.0; n],
            theta: vec![0.0; p],
        }
    }

    pub fn dot(&self, other: &JointVector) -> f64 {
        dot(&self.w, &other.w) + dot(&self.theta, &other.theta)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `self + scale * other`.
    pub fn plus_scaled(&self, scale: f64, other: &JointVector) -> JointVector {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + scale * y).collect();
        JointVector {
            w: f(&self.w, &other.w),
            theta: f(&self.theta, &other.theta),
        }
    }

    fn same_shape(&self, other: &JointVector, what: &str) -> Result<()> {
        if self.w.len() != other.w.len() {
            return Err(Error::dim(format!("{what} w-block"), self.w.len(), other.w.len()));
        }
        if self.theta.len() != other.theta.len() {
            return Err(Error::dim(format!("{what} θ-block"), self.theta.len(), other.theta.len()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeightVector(Vec<f64>);

impl TaskWeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.is_empty() || w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidSpec(format!("weights {w:?} are not on the simplex")));
        }
        Ok(TaskWeightVector(w))
    }

    pub fn uniform(n: usize) -> Self {
        TaskWeightVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointVariable {
    pub w: TaskWeightVector,
    pub theta: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentDirection {
    pub grad_f: JointVector,
    pub grad_g: JointVector,
    pub rho: f64,
    pub lambda: f64,
    pub d: JointVector,
    pub psi: f64,
    /// `‖∇g̃‖` was below the threshold and `λ = 0` was forced.
    pub fallback: bool,
}

/// Value-function constraint estimate: `f(θ) - f(θ̃^H)` on one batch.
pub fn g_tilde(at_current: f64, at_descended: f64) -> f64 {
    at_current - at_descended
}

/// `∇g̃ = ∇_v f(v) - [∇_w f(w, θ̃^H), 0]`, with `θ̃^H` held constant in `w`.
pub fn grad_g_tilde(grad_current: &JointVector, grad_w_descended: &[f64]) -> Result<JointVector> {
    if grad_w_descended.len() != grad_current.w.len() {
        return Err(Error::dim("descended w-gradient", grad_current.w.len(), grad_w_descended.len()));
    }
    Ok(JointVector {
        w: grad_current.w.iter().zip(grad_w_descended).map(|(a, b)| a - b).collect(),
        theta: grad_current.theta.clone(),
    })
}

/// Closed-form minimizer of `⟨∇F, d⟩ + ½‖d‖²` s.t. `⟨∇g̃, d⟩ ≤ -ρ`,
/// `ρ = β‖∇g̃‖²`.
pub fn lambda_and_direction(grad_f: &JointVector, grad_g: &JointVector, beta: f64, fallback_norm: f64) -> Result<DescentDirection> {
    grad_f.same_shape(grad_g, "constraint gradient")?;
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    let gg = grad_g.norm_sq();
    let fallback = gg.sqrt() <= fallback_norm;
    let (rho, lambda) = if fallback {
        (beta * gg, 0.0)
    } else {
        let rho = beta * gg;
        (rho, f64::max((rho - grad_g.dot(grad_f)) / gg, 0.0))
    };
    let stationary = grad_f.plus_scaled(lambda, grad_g);
    let psi = stationary.norm_sq();
    let d = JointVector {
        w: stationary.w.iter().map(|v| -v).collect(),
        theta: stationary.theta.iter().map(|v| -v).collect(),
    };
    Ok(DescentDirection {
        grad_f: grad_f.clone(),
        grad_g: grad_g.clone(),
        rho,
        lambda,
        d,
        psi,
        fallback,
    })
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(raw: &[f64]) -> Result<TaskWeightVector> {
    if raw.is_empty() {
        return Err(Error::InvalidSpec("cannot project an empty vector".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "weights before projection".into(),
            step: 0,
        });
    }
    let mut u = raw.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &v) in u.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    let mut w: Vec<f64> = raw.iter().map(|v| (v - tau).max(0.0)).collect();
    // Already-feasible input comes back unchanged.
    if raw.iter().all(|&v| v >= 0.0) && (raw.iter().sum::<f64>() - 1.0).abs() <= 1e-12 {
        w = raw.to_vec();
    }
    Ok(TaskWeightVector(w))
}

/// `w ← P(w + η d_w)`, `θ ← θ + η d_θ`.
pub fn apply_direction(v: &JointVariable, d: &JointVector, eta: f64) -> Result<JointVariable> {
    if d.w.len() != v.w.len() {
        return Err(Error::dim("direction w-block", v.w.len(), d.w.len()));
    }
    if eta == 0.0 {
        return Ok(v.clone());
    }
    let w = if d.w.iter().all(|&x| x == 0.0) {
        v.w.clone()
    } else {
        let raw: Vec<f64> = v.w.as_slice().iter().zip(&d.w).map(|(w, d)| w + eta * d).collect();
        project_simplex(&raw)?
    };
    let mut theta = v.theta.clone();
    theta.axpy(eta, &d.theta)?;
    if theta.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "encoder parameters after joint step".into(),
            step: 0,
        });
    }
    Ok(JointVariable { w, theta })
}

/// Diagnostics of one descent-direction solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub psi: f64,
    pub g_tilde: f64,
    pub lambda: f64,
    pub rho: f64,
    pub g_dot_d: f64,
    pub fallback: bool,
}

/// Checks complementary slackness of `dd`; fails with every scalar attached.
pub fn kkt_report(dd: &DescentDirection, g_tilde: f64) -> Result<KktReport> {
    let g_dot_d = dd.grad_g.dot(&dd.d);
    let report = KktReport {
        psi: dd.psi,
        g_tilde,
        lambda: dd.lambda,
        rho: dd.rho,
        g_dot_d,
        fallback: dd.fallback,
    };
    if dd.fallback {
        return Ok(report);
    }
    let tol = 1e-6 * (1.0 + dd.rho);
    let ok = if dd.lambda > 0.0 {
        (g_dot_d + dd.rho).abs() <= tol
    } else {
        g_dot_d <= -dd.rho + tol
    };
    if !ok {
        return Err(Error::Kkt(format!(
            "{report:?}, |∇F|^2={}, |∇g|^2={}",
            dd.grad_f.norm_sq(),
            dd.grad_g.norm_sq()
        )));
    }
    Ok(report)
}
