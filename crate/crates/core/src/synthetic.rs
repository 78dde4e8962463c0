//! Quadratic tri-level benchmark with a known optimum.
//!
//! Lower objective `f(w, θ) = ½ eᵀQe` with `e = θ - Aw - b`, so
//! `θ*(w) = Aw + b`. Upper objective
//! `F(w, θ) = ½‖θ - θ_t‖² + c/2 ‖w - w_t‖²` with `θ_t = θ*(w_t)` and `w_t`
//! inside the simplex, so `(w_t, θ_t)` is feasible and stationary. The
//! descent-direction machinery runs with analytic gradients in place of the
//! neural ones.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::par;
use crate::trilevel::{self, JointVector, KktReport};

const EIG_MIN: f64 = 4.0;
const EIG_MAX: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct SynthProblem {
    a: Array2<f64>,
    b: Array1<f64>,
    q: Array2<f64>,
    pub w_target: Vec<f64>,
    pub theta_target: Vec<f64>,
    pub c: f64,
    pub inner_lr: f64,
    pub inner_steps: usize,
    seed: u64,
}

/// One iteration of the benchmark loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub iter: usize,
    pub w: Vec<f64>,
    pub upper: f64,
    pub report: KktReport,
}

fn orthonormal(p: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut m = Array2::<f64>::from_shape_fn((p, p), |_| rng.sample(StandardNormal));
    for j in 0..p {
        for k in 0..j {
            let proj: f64 = (0..p).map(|i| m[[i, j]] * m[[i, k]]).sum();
            for i in 0..p {
                m[[i, j]] -= proj * m[[i, k]];
            }
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    m
}

impl SynthProblem {
    /// `n` task weights, `p` encoder coordinates; both at most 10.
    pub fn new(n: usize, p: usize, seed: u64) -> Result<Self> {
        if !(1..=10).contains(&n) || !(1..=10).contains(&p) {
            return Err(Error::InvalidSpec(format!("benchmark dims must be in 1..=10, got n={n}, p={p}")));
        }
        let mut rng = par::stream(seed, &[0x5359_4e54]);
        let u = orthonormal(p, &mut rng);
        let eig = Uniform::new_inclusive(EIG_MIN, EIG_MAX).expect("interval");
        let lam: Vec<f64> = (0..p).map(|_| rng.sample(eig)).collect();
        let q = Array2::from_shape_fn((p, p), |(i, j)| (0..p).map(|k| u[[i, k]] * lam[k] * u[[j, k]]).sum());
        let scale = 0.5 / (n as f64).sqrt();
        let a = Array2::from_shape_fn((p, n), |_| scale * rng.sample::<f64, _>(StandardNormal));
        let b = Array1::from_shape_fn(p, |_| rng.sample::<f64, _>(StandardNormal));
        let raw = Uniform::new(0.5, 1.0).expect("interval");
        let mut w_target: Vec<f64> = (0..n).map(|_| rng.sample(raw)).collect();
        let s: f64 = w_target.iter().sum();
        w_target.iter_mut().for_each(|v| *v /= s);
        let theta_target = (a.dot(&Array1::from(w_target.clone())) + &b).to_vec();
        Ok(SynthProblem {
            a,
            b,
            q,
            w_target,
            theta_target,
            c: 1.0,
            inner_lr: 0.1,
            inner_steps: 5,
            seed,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a.ncols(), self.a.nrows())
    }

    fn residual(&self, w: &[f64], theta: &[f64]) -> Array1<f64> {
        Array1::from(theta.to_vec()) - self.a.dot(&Array1::from(w.to_vec())) - &self.b
    }

    pub fn lower(&self, w: &[f64], theta: &[f64]) -> f64 {
        let e = self.residual(w, theta);
        0.5 * e.dot(&self.q.dot(&e))
    }

    /// `(∇_w f, ∇_θ f)`.
    pub fn grad_lower(&self, w: &[f64], theta: &[f64]) -> JointVector {
        let qe = self.q.dot(&self.residual(w, theta));
        JointVector::new((-self.a.t().dot(&qe)).to_vec(), qe.to_vec())
    }

    pub fn upper(&self, w: &[f64], theta: &[f64]) -> f64 {
        let dt: f64 = theta.iter().zip(&self.theta_target).map(|(x, t)| (x - t) * (x - t)).sum();
        let dw: f64 = w.iter().zip(&self.w_target).map(|(x, t)| (x - t) * (x - t)).sum();
        0.5 * dt + 0.5 * self.c * dw
    }

    pub fn grad_upper(&self, w: &[f64], theta: &[f64]) -> JointVector {
        JointVector::new(
            w.iter().zip(&self.w_target).map(|(x, t)| self.c * (x - t)).collect(),
            theta.iter().zip(&self.theta_target).map(|(x, t)| x - t).collect(),
        )
    }

    /// `H` gradient steps on `f(w, ·)` from `θ`.
    pub fn descend(&self, w: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut t = theta.to_vec();
        for _ in 0..self.inner_steps {
            let g = self.grad_lower(w, &t);
            t.iter_mut().zip(&g.theta).for_each(|(x, g)| *x -= self.inner_lr * g);
        }
        t
    }

    /// Uniform weights and an encoder point off the lower-level optimum.
    pub fn initial(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, p) = self.dims();
        let w = vec![1.0 / n as f64; n];
        let mut rng = par::stream(self.seed, &[0x494e_4954]);
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let base = self.a.dot(&Array1::from(w.clone())) + &self.b;
        let theta = base.iter().zip(&z).map(|(b, z)| b + 0.3 * z / norm).collect();
        (w, theta)
    }

    /// One joint step; returns the new point and the diagnostics at the old.
    pub fn step(&self, w: &[f64], theta: &[f64], eta: f64, beta: f64) -> Result<(Vec<f64>, Vec<f64>, KktReport)> {
        let descended = self.descend(w, theta);
        let g = trilevel::g_tilde(self.lower(w, theta), self.lower(w, &descended));
        let grad_g = trilevel::grad_g_tilde(&self.grad_lower(w, theta), &self.grad_lower(w, &descended).w)?;
        let grad_f = self.grad_upper(w, theta);
        let dd = trilevel::lambda_and_direction(&grad_f, &grad_g, beta, trilevel::DEFAULT_FALLBACK_NORM)?;
        let report = trilevel::kkt_report(&dd, g)?;
        let raw: Vec<f64> = w.iter().zip(&dd.d.w).map(|(w, d)| w + eta * d).collect();
        let w_next = trilevel::project_simplex(&raw)?.as_slice().to_vec();
        let theta_next = theta.iter().zip(&dd.d.theta).map(|(t, d)| t + eta * d).collect();
        Ok((w_next, theta_next, report))
    }
}

/// Runs `iterations` joint steps from [`SynthProblem::initial`].
pub fn run_synth_trilevel(problem: &SynthProblem, iterations: usize, eta: f64, beta: f64) -> Result<Vec<SynthRecord>> {
    let (mut w, mut theta) = problem.initial();
    let mut out = Vec::with_capacity(iterations);
    for iter in 0..iterations {
        let upper = problem.upper(&w, &theta);
        let (wn, tn, report) = problem.step(&w, &theta, eta, beta)?;
        out.push(SynthRecord {
            iter,
            w: w.clone(),
            upper,
            report,
        });
        w = wn;
        theta = tn;
    }
    Ok(out)
}

/// `min_{l < upto} ψ_l`.
pub fn min_psi(records: &[SynthRecord], upto: usize) -> f64 {
    records[..upto.min(records.len())].iter().map(|r| r.report.psi).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_is_stationary() {
        let p = SynthProblem::new(3, 6, 1).unwrap();
        let (w, t) = (p.w_target.clone(), p.theta_target.clone());
        assert!(p.lower(&w, &t) < 1e-20);
        let (_, _, report) = p.step(&w, &t, 0.01, 0.5).unwrap();
        assert!(report.psi <= 1e-8, "{report:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = SynthProblem::new(2, 4, 3).unwrap();
        let (w, t) = p.initial();
        let g = p.grad_lower(&w, &t);
        let h = 1e-6;
        for i in 0..t.len() {
            let (mut a, mut b) = (t.clone(), t.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (p.lower(&w, &a) - p.lower(&w, &b)) / (2.0 * h);
            assert!((fd - g.theta[i]).abs() < 1e-7);
        }
        for i in 0..w.len() {
            let (mut a, mut b) = (w.clone(), w.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (p.lower(&a, &t) - p.lower(&b, &t)) / (2.0 * h);
            assert!((fd - g.w[i]).abs() < 1e-7);
        }
    }
}
