//! Brute-force ground truth for models with at most four sites.
//!
//! The general measure is `exp[−½(φ,Aφ) − Σ_x(¼gφ_x⁴ + ½νφ_x²) + (h,φ)] dφ`
//! with the plain inner product `(u,v) = Σ u_x v_x`. Integrals are tensor
//! quadratures around a Gaussian envelope fitted at the mode of the action.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::numerics::gauss_hermite;

pub const MAX_ORACLE_SITES: usize = 4;

/// Relative change tolerated when the node count is doubled.
pub const GATE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    pub a: DMatrix<f64>,
    pub g: f64,
    pub nu: f64,
    pub h: DVector<f64>,
}

impl GeneralModel {
    pub fn new(a: DMatrix<f64>, g: f64, nu: f64, h: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || n == 0 {
            return Err(Error::Config("A must be a non-empty square matrix".into()));
        }
        check_len(n, h.len())?;
        for i in 0..n {
            for j in 0..n {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * (a[(i, j)].abs() + 1.0) {
                    return Err(Error::Config("A must be symmetric".into()));
                }
                if i != j && a[(i, j)] > 0.0 {
                    return Err(Error::Config("A must have non-positive off-diagonal entries".into()));
                }
            }
        }
        let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::Config(format!("A must be positive definite (smallest eigenvalue {min_eig})")));
        }
        if !(g.is_finite() && g >= 0.0) || !nu.is_finite() || h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("g must be non-negative; g, ν, h finite".into()));
        }
        Ok(GeneralModel { a, g, nu, h })
    }

    /// Nearest-neighbour ring of `n` sites: `A = (−Δ_ring) + m²`, with the
    /// two-site ring carrying both bonds between its sites.
    pub fn ring(n: usize, m2: f64, g: f64, nu: f64) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] += m2;
            if n > 1 {
                for j in [(i + 1) % n, (i + n - 1) % n] {
                    a[(i, i)] += 1.0;
                    a[(i, j)] -= 1.0;
                }
            }
        }
        Self::new(a, g, nu, DVector::zeros(n))
    }

    pub fn sites(&self) -> usize {
        self.a.nrows()
    }

    pub fn with_h(&self, h: DVector<f64>) -> Result<Self> {
        check_len(self.sites(), h.len())?;
        Ok(GeneralModel { h, ..self.clone() })
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        GeneralModel { nu, ..self.clone() }
    }

    /// `S(φ) = ½(φ,Aφ) + Σ(¼gφ⁴ + ½νφ²) − (h,φ)`.
    pub fn action(&self, phi: &[f64]) -> f64 {
        let n = self.sites();
        let mut s = 0.0;
        for i in 0..n {
            let mut ai = 0.0;
            for j in 0..n {
                ai += self.a[(i, j)] * phi[j];
            }
            let p2 = phi[i] * phi[i];
            s += 0.5 * phi[i] * ai + 0.25 * self.g * p2 * p2 + 0.5 * self.nu * p2 - self.h[i] * phi[i];
        }
        s
    }

    fn gradient(&self, phi: &[f64]) -> DVector<f64> {
        let p = DVector::from_column_slice(phi);
        let mut g = &self.a * &p - &self.h;
        for i in 0..self.sites() {
            g[i] += self.g * phi[i].powi(3) + self.nu * phi[i];
        }
        g
    }

    fn hessian(&self, phi: &[f64]) -> DMatrix<f64> {
        let mut hs = self.a.clone();
        for i in 0..self.sites() {
            hs[(i, i)] += 3.0 * self.g * phi[i] * phi[i] + self.nu;
        }
        hs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    GaussHermite,
    AdaptiveTrapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureGrid {
    pub rule: QuadratureRule,
    pub nodes_per_dim: usize,
    /// Half-width of the truncated box in field units; `None` sizes the box
    /// from the rise of the action along each axis.
    pub domain_halfwidth: Option<f64>,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid {
            rule: QuadratureRule::GaussHermite,
            nodes_per_dim: 32,
            domain_halfwidth: None,
        }
    }
}

impl QuadratureGrid {
    pub fn trapezoid(nodes_per_dim: usize) -> Self {
        QuadratureGrid {
            rule: QuadratureRule::AdaptiveTrapezoid,
            nodes_per_dim,
            ..Default::default()
        }
    }

    fn doubled(&self) -> Self {
        QuadratureGrid {
            nodes_per_dim: 2 * self.nodes_per_dim,
            ..*self
        }
    }
}

/// Exact moments of a general model.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    pub log_z: f64,
    pub mean: DVector<f64>,
    /// `⟨φ_xφ_y⟩`.
    pub second: DMatrix<f64>,
    /// `⟨φ_x;φ_y⟩`.
    pub truncated: DMatrix<f64>,
    /// `⟨φ_x²φ_y²⟩`.
    pub fourth: DMatrix<f64>,
    /// Normalised change under node doubling (or between rules).
    pub gate_delta: f64,
}

/// Gaussian envelope `φ = c + √2·B·y` (Hermite) or `φ = c + B·y`
/// (trapezoid), `B Bᵀ = P^{-1}`.
#[derive(Debug, Clone)]
pub struct Envelope {
    center: Vec<f64>,
    b: DMatrix<f64>,
    log_det_b: f64,
}

/// Action rise beyond which the trapezoid box is truncated.
const BOX_RISE: f64 = 40.0;
/// Widening of the box past the along-axis rise point, covering marginal
/// spread beyond the conditional one.
const BOX_MARGIN: f64 = 1.3;

/// Half-width in whitened units along envelope axis `axis` past which the
/// action exceeds its running minimum on the ray by `BOX_RISE`.
fn axis_halfwidth(model: &GeneralModel, env: &Envelope, axis: usize) -> f64 {
    let n = env.center.len();
    let step = 0.02;
    let mut best: f64 = 0.0;
    for dir in [1.0, -1.0] {
        let mut p = env.center.clone();
        let mut run_min = model.action(&p);
        let mut r = 0.0;
        loop {
            r += step;
            for i in 0..n {
                p[i] = env.center[i] + dir * r * env.b[(i, axis)];
            }
            let s = model.action(&p);
            run_min = run_min.min(s);
            if s - run_min >= BOX_RISE || r > 1e4 {
                break;
            }
        }
        best = best.max(r);
    }
    BOX_MARGIN * best
}

impl Envelope {
    pub fn laplace(model: &GeneralModel) -> Result<Self> {
        let n = model.sites();
        let convex = SymmetricEigen::new(model.hessian(&vec![0.0; n])).eigenvalues.min() > 0.0;
        let (center, p) = if convex {
            let c = find_mode(model)?;
            let p = model.hessian(&c);
            (c, p)
        } else {
            // Non-convex well: centre on the origin with a precision wide
            // enough to cover every minimum.
            let eig = SymmetricEigen::new(model.hessian(&vec![0.0; n]));
            let g = model.g.max(1e-12);
            let vals = eig.eigenvalues.map(|l| {
                if l > 0.0 {
                    l
                } else {
                    // variance ≈ squared well position plus the well width
                    1.0 / (l.abs() / g + 1.0 / (l.abs() + g.sqrt()))
                }
            });
            let p = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            (vec![0.0; n], p)
        };
        Self::from_precision(center, p)
    }

    /// Same envelope with Hermite node spread multiplied by `s`.
    fn scaled(&self, s: f64) -> Self {
        Envelope {
            b: &self.b * s,
            log_det_b: self.log_det_b + self.center.len() as f64 * s.ln(),
            ..self.clone()
        }
    }

    fn from_precision(center: Vec<f64>, p: DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(p);
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Precision("envelope precision is not positive definite".into()));
        }
        let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let b = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt);
        let log_det_b = inv_sqrt.iter().map(|v| v.ln()).sum();
        Ok(Envelope { center, b, log_det_b })
    }
}

fn find_mode(model: &GeneralModel) -> Result<Vec<f64>> {
    let n = model.sites();
    let mut phi = vec![0.0; n];
    let mut s = model.action(&phi);
    for _ in 0..200 {
        let grad = model.gradient(&phi);
        if grad.norm() < 1e-14 * (1.0 + model.h.norm()) {
            break;
        }
        let hs = model.hessian(&phi);
        let step = hs
            .cholesky()
            .map(|c| c.solve(&grad))
            .unwrap_or_else(|| grad.clone());
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = phi.iter().zip(step.iter()).map(|(p, d)| p - alpha * d).collect();
            let st = model.action(&trial);
            if st <= s || alpha < 1e-12 {
                phi = trial;
                s = st;
                break;
            }
            alpha *= 0.5;
        }
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precision("mode search diverged".into()));
    }
    Ok(phi)
}

#[derive(Debug, Clone)]
struct Accum {
    w: f64,
    y1: Vec<f64>,
    y2: Vec<f64>,
    p4: Vec<f64>,
}

impl Accum {
    fn new(n: usize) -> Self {
        Accum { w: 0.0, y1: vec![0.0; n], y2: vec![0.0; n * n], p4: vec![0.0; n * n] }
    }

    fn push(&mut self, wt: f64, y: &[f64], phi: &[f64]) {
        let n = y.len();
        self.w += wt;
        for i in 0..n {
            self.y1[i] += wt * y[i];
            for j in 0..n {
                self.y2[i * n + j] += wt * y[i] * y[j];
                self.p4[i * n + j] += wt * phi[i] * phi[i] * phi[j] * phi[j];
            }
        }
    }

    fn merge(mut self, o: &Accum) -> Self {
        self.w += o.w;
        for (a, b) in self.y1.iter_mut().zip(&o.y1) {
            *a += b;
        }
        for (a, b) in self.y2.iter_mut().zip(&o.y2) {
            *a += b;
        }
        for (a, b) in self.p4.iter_mut().zip(&o.p4) {
            *a += b;
        }
        self
    }
}

fn nodes_for(model: &GeneralModel, grid: &QuadratureGrid, env: &Envelope, axis: usize) -> (Vec<f64>, Vec<f64>) {
    match grid.rule {
        QuadratureRule::GaussHermite => {
            let (x, w) = gauss_hermite(grid.nodes_per_dim);
            (x, w.into_iter().map(f64::ln).collect())
        }
        QuadratureRule::AdaptiveTrapezoid => {
            let m = grid.nodes_per_dim;
            let r = grid
                .domain_halfwidth
                .unwrap_or_else(|| axis_halfwidth(model, env, axis));
            let step = 2.0 * r / (m - 1) as f64;
            let x = (0..m).map(|j| -r + j as f64 * step).collect();
            let lw = (0..m)
                .map(|j| if j == 0 || j == m - 1 { (0.5 * step).ln() } else { step.ln() })
                .collect();
            (x, lw)
        }
    }
}

fn integrate(model: &GeneralModel, grid: &QuadratureGrid, env: &Envelope) -> Result<MomentRecord> {
    let n = model.sites();
    if n > MAX_ORACLE_SITES {
        return Err(Error::Capability(format!("oracle supports at most {MAX_ORACLE_SITES} sites, got {n}")));
    }
    if grid.nodes_per_dim < 2 {
        return Err(Error::Config("quadrature needs at least two nodes per dimension".into()));
    }
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|a| nodes_for(model, grid, env, a)).collect();
    let m = grid.nodes_per_dim;
    let s_ref = model.action(&env.center);
    let gh = grid.rule == QuadratureRule::GaussHermite;
    let sqrt2 = std::f64::consts::SQRT_2;
    let total = m.pow(n as u32);
    let inner = total / m;
    let partials: Vec<Accum> = (0..m)
        .into_par_iter()
        .map(|i0| {
            let mut acc = Accum::new(n);
            let mut idx = vec![0usize; n];
            let mut y = vec![0.0; n];
            let mut phi = vec![0.0; n];
            for rest in 0..inner {
                idx[0] = i0;
                let mut r = rest;
                for a in (1..n).rev() {
                    idx[a] = r % m;
                    r /= m;
                }
                let mut lw = 0.0;
                let mut ysq = 0.0;
                for a in 0..n {
                    let (ref x, ref w) = axes[a];
                    y[a] = x[idx[a]];
                    lw += w[idx[a]];
                    ysq += y[a] * y[a];
                }
                if gh {
                    for i in 0..n {
                        let mut v = env.center[i];
                        for j in 0..n {
                            v += sqrt2 * env.b[(i, j)] * y[j];
                        }
                        phi[i] = v;
                    }
                } else {
                    for i in 0..n {
                        let mut v = env.center[i];
                        for j in 0..n {
                            v += env.b[(i, j)] * y[j];
                        }
                        phi[i] = v;
                    }
                    ysq = 0.0;
                }
                let lt = lw + ysq - (model.action(&phi) - s_ref);
                let wt = lt.exp();
                if wt > 0.0 {
                    let dy: Vec<f64> = phi.iter().zip(&env.center).map(|(p, c)| p - c).collect();
                    acc.push(wt, &dy, &phi);
                }
            }
            acc
        })
        .collect();
    let acc = partials.iter().skip(1).fold(partials[0].clone(), |a, b| a.merge(b));
    if !(acc.w > 0.0 && acc.w.is_finite()) {
        return Err(Error::Precision("quadrature mass underflowed or overflowed".into()));
    }
    let log_jac = if gh {
        0.5 * n as f64 * 2f64.ln() + env.log_det_b
    } else {
        env.log_det_b
    };
    let log_z = -s_ref + acc.w.ln() + log_jac;
    let ey = DVector::from_iterator(n, acc.y1.iter().map(|v| v / acc.w));
    let mean = DVector::from_iterator(n, (0..n).map(|i| env.center[i] + ey[i]));
    let truncated = DMatrix::from_fn(n, n, |i, j| acc.y2[i * n + j] / acc.w - ey[i] * ey[j]);
    let truncated = 0.5 * (&truncated + truncated.transpose());
    let second = &truncated + &mean * mean.transpose();
    let fourth = DMatrix::from_fn(n, n, |i, j| acc.p4[i * n + j] / acc.w);
    Ok(MomentRecord { log_z, mean, second, truncated, fourth, gate_delta: 0.0 })
}

/// Largest normalised discrepancy between two records. Each block is scaled
/// by its natural magnitude so that vanishing entries do not blow up.
pub fn record_delta(a: &MomentRecord, b: &MomentRecord) -> f64 {
    let s2 = a.second.diagonal().max().max(b.second.diagonal().max()).max(1e-300);
    let s4 = a.fourth.max().max(b.fourth.max()).max(1e-300);
    let mut d = (a.log_z - b.log_z).abs();
    d = d.max((&a.mean - &b.mean).amax() / s2.sqrt());
    d = d.max((&a.second - &b.second).amax() / s2);
    d = d.max((&a.truncated - &b.truncated).amax() / s2);
    d = d.max((&a.fourth - &b.fourth).amax() / s4);
    d
}

/// Hermite node spreads tried in order; quartic tails make the integrand
/// decay faster than the Laplace envelope, so a narrower spread converges
/// first in most cases.
const HERMITE_SPREADS: [f64; 4] = [0.7, 0.5, 1.0, 0.35];

/// Spreads tried around the moment-matched envelope.
const MATCHED_SPREADS: [f64; 3] = [1.0, 0.85, 0.7];

/// Largest tensor grid (nodes per dimension to the power of the dimension)
/// the gate may escalate to.
const MAX_TENSOR_NODES: usize = 1 << 24;
const MAX_NODES_PER_DIM: usize = 256;

/// Runs `grid` and its doubling; on gate failure tries other Hermite spreads,
/// then doubles the base node count while the tensor grid stays affordable.
fn gated(model: &GeneralModel, grid: &QuadratureGrid, env: &Envelope) -> Result<MomentRecord> {
    let spreads: &[f64] = match grid.rule {
        QuadratureRule::GaussHermite => &HERMITE_SPREADS,
        QuadratureRule::AdaptiveTrapezoid => &[1.0],
    };
    let n = model.sites() as u32;
    let mut worst = f64::INFINITY;
    let mut g = *grid;
    loop {
        let mut last = None;
        for &s in spreads {
            let env = env.scaled(s);
            let coarse = integrate(model, &g, &env)?;
            let mut fine = integrate(model, &g.doubled(), &env)?;
            let delta = record_delta(&coarse, &fine);
            if delta < GATE_TOL {
                fine.gate_delta = delta;
                return Ok(fine);
            }
            worst = worst.min(delta);
            last = Some(fine);
        }
        // Moment-matched envelope from the best available estimate.
        if let (QuadratureRule::GaussHermite, Some(fine)) = (grid.rule, last) {
            if let Some(p) = fine.truncated.clone().try_inverse() {
                let c: Vec<f64> = fine.mean.iter().copied().collect();
                if let Ok(mm) = Envelope::from_precision(c, 0.5 * (&p + p.transpose())) {
                    for &s in &MATCHED_SPREADS {
                        let env = mm.scaled(s);
                        let coarse = integrate(model, &g, &env)?;
                        let mut fine = integrate(model, &g.doubled(), &env)?;
                        let delta = record_delta(&coarse, &fine);
                        if delta < GATE_TOL {
                            fine.gate_delta = delta;
                            return Ok(fine);
                        }
                        worst = worst.min(delta);
                    }
                }
            }
        }
        if 4 * g.nodes_per_dim > MAX_NODES_PER_DIM || (4 * g.nodes_per_dim).pow(n) > MAX_TENSOR_NODES {
            break;
        }
        g = g.doubled();
    }
    Err(Error::Precision(format!(
        "node doubling from {} per dimension changed moments by at least {worst:.3e}",
        grid.nodes_per_dim
    )))
}

/// Moments under `grid`, gated by node doubling.
pub fn moments(model: &GeneralModel, grid: &QuadratureGrid) -> Result<MomentRecord> {
    let env = Envelope::laplace(model)?;
    gated(model, grid, &env)
}

/// Moments by Gauss–Hermite and by the truncated trapezoid, each gated, and
/// required to agree with each other to the gate tolerance.
pub fn moments_dual_rule(model: &GeneralModel, nodes_per_dim: usize) -> Result<MomentRecord> {
    let env = Envelope::laplace(model)?;
    let gh = gated(model, &QuadratureGrid { nodes_per_dim, ..Default::default() }, &env)?;
    let tr = gated(model, &QuadratureGrid::trapezoid(nodes_per_dim), &env)?;
    let delta = record_delta(&gh, &tr);
    if !(delta < GATE_TOL) {
        return Err(Error::Precision(format!("quadrature rules disagree by {delta:.3e}")));
    }
    Ok(MomentRecord { gate_delta: delta.max(gh.gate_delta), ..gh })
}

/// `Σ_{x,y} = ⟨φ_x;φ_y⟩^h` with the default gated rule.
pub fn truncated_two_point(model: &GeneralModel) -> Result<DMatrix<f64>> {
    Ok(moments(model, &QuadratureGrid::default())?.truncated)
}

/// `C_t = (A + 1/t)^{-1}`.
pub fn covariance_t(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = a + DMatrix::identity(n, n) / t;
    m.try_inverse().ok_or_else(|| Error::Domain("A + 1/t is singular".into()))
}

/// Flow model at scale `t`: `μ^h_{A,g,ν+1/t}` with `h = C_t^{-1}φ`.
pub fn flow_model(model: &GeneralModel, t: f64, phi: &[f64]) -> Result<GeneralModel> {
    let n = model.sites();
    check_len(n, phi.len())?;
    let cinv = &model.a + DMatrix::identity(n, n) / t;
    let h = &cinv * DVector::from_column_slice(phi);
    GeneralModel::new(model.a.clone(), model.g, model.nu + 1.0 / t, h)
}

/// `Σ_t(φ)`.
pub fn sigma_t(model: &GeneralModel, t: f64, phi: &[f64]) -> Result<DMatrix<f64>> {
    truncated_two_point(&flow_model(model, t, phi)?)
}

/// `V_t(φ) = ½(φ,C_t^{-1}φ) − log Z(C_t^{-1}φ) + log Z(0)`, so `V_t(0) = 0`.
pub fn renormalized_potential(model: &GeneralModel, t: f64, phi: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    let n = model.sites();
    if n > 2 {
        return Err(Error::Capability(format!("renormalised potential supports at most 2 sites, got {n}")));
    }
    let base = flow_model(model, t, &vec![0.0; n])?;
    let env = Envelope::laplace(&base)?;
    let z0 = gated(&base, grid, &env)?.log_z;
    potential_with_envelope(model, t, phi, grid, None, z0)
}

fn potential_with_envelope(
    model: &GeneralModel,
    t: f64,
    phi: &[f64],
    grid: &QuadratureGrid,
    env: Option<&Envelope>,
    log_z0: f64,
) -> Result<f64> {
    let fm = flow_model(model, t, phi)?;
    let own;
    let env = match env {
        Some(e) => e,
        None => {
            own = Envelope::laplace(&fm)?;
            &own
        }
    };
    let lz = gated(&fm, grid, env)?.log_z;
    let p = DVector::from_column_slice(phi);
    let cinv = &model.a + DMatrix::identity(phi.len(), phi.len()) / t;
    Ok(0.5 * p.dot(&(&cinv * &p)) - lz + log_z0)
}

/// `C_t^{-1} − C_t^{-1} Σ_t(φ) C_t^{-1}`.
pub fn hessian_identity(model: &GeneralModel, t: f64, phi: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.sites();
    let cinv = &model.a + DMatrix::identity(n, n) / t;
    let s = sigma_t(model, t, phi)?;
    Ok(&cinv - &cinv * s * &cinv)
}

/// Central-difference Hessian of `V_t` at `φ` with step `h`, together with
/// the largest change against the step-`h/2` Richardson-extrapolated value.
pub fn fd_hessian(model: &GeneralModel, t: f64, phi: &[f64], step: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = model.sites();
    let grid = QuadratureGrid::default();
    // Shared envelope: quadrature error is then a smooth function of φ.
    let env = Envelope::laplace(&flow_model(model, t, phi)?)?;
    let v = |p: &[f64]| potential_with_envelope(model, t, p, &grid, Some(&env), 0.0);
    let hess_at = |hstep: f64| -> Result<DMatrix<f64>> {
        let v0 = v(phi)?;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let shifted = |si: f64, sj: f64| {
                    let mut p = phi.to_vec();
                    p[i] += si * hstep;
                    p[j] += sj * hstep;
                    v(&p)
                };
                let val = if i == j {
                    (shifted(0.5, 0.5)? - 2.0 * v0 + shifted(-0.5, -0.5)?) / (hstep * hstep)
                } else {
                    (shifted(1.0, 1.0)? - shifted(1.0, -1.0)? - shifted(-1.0, 1.0)? + shifted(-1.0, -1.0)?)
                        / (4.0 * hstep * hstep)
                };
                out[(i, j)] = val;
                out[(j, i)] = val;
            }
        }
        Ok(out)
    };
    let coarse = hess_at(step)?;
    let fine = hess_at(0.5 * step)?;
    let rich = (&fine * 4.0 - &coarse) / 3.0;
    let change = (&rich - &fine).amax();
    Ok((rich, change))
}

/// Spectral radius of a symmetric matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()))
}

pub fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).sum()).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct HessianReport {
    pub t: f64,
    pub chi_t: f64,
    /// `min(ρ(Σ_t(0)) − ρ(Σ_t(φ)))` over samples.
    pub radius_slack: f64,
    /// `χ_t − ρ(Σ_t(0))`.
    pub row_sum_slack: f64,
    /// `min Xᵀ(Hess − C^{-1} + χ C^{-2})X / |X|²`.
    pub quadratic_form_slack: f64,
    /// Largest relative error in `Ċ = C²/t²` and `C̈ = −(2/t)ACĊ`.
    pub derivative_identity_error: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Checks the ingredients that allow `ℓ̇_t = κ̇_t` on sampled `φ` and `X`.
pub fn verify_hessian_criterion(
    model: &GeneralModel,
    t: f64,
    phis: &[Vec<f64>],
    xs: &[Vec<f64>],
    tol: f64,
) -> Result<HessianReport> {
    let n = model.sites();
    let cinv = &model.a + DMatrix::identity(n, n) / t;
    let s0 = sigma_t(model, t, &vec![0.0; n])?;
    let chi = max_row_sum(&s0);
    let rho0 = spectral_radius(&s0);
    let row_sum_slack = chi - rho0;
    let bound = &cinv - &cinv * &cinv * chi;
    let per_sample: Vec<Result<(f64, f64)>> = phis
        .par_iter()
        .map(|phi| {
            let s = sigma_t(model, t, phi)?;
            let hess = &cinv - &cinv * &s * &cinv;
            let gap = &hess - &bound;
            let mut q = f64::INFINITY;
            for x in xs {
                let xv = DVector::from_column_slice(x);
                let nn = xv.norm_squared();
                if nn > 0.0 {
                    q = q.min(xv.dot(&(&gap * &xv)) / nn);
                }
            }
            Ok((rho0 - spectral_radius(&s), q))
        })
        .collect();
    let mut radius_slack = f64::INFINITY;
    let mut qf = f64::INFINITY;
    for r in per_sample {
        let (a, b) = r?;
        radius_slack = radius_slack.min(a);
        qf = qf.min(b);
    }
    let derivative_identity_error = derivative_identity_error(&model.a, t)?;
    let scale = cinv.amax().powi(2) * chi.max(1.0);
    let passed = radius_slack >= -tol * rho0.max(1.0)
        && row_sum_slack >= -tol * chi.max(1.0)
        && qf >= -tol * scale
        && derivative_identity_error <= 1e-6;
    Ok(HessianReport {
        t,
        chi_t: chi,
        radius_slack,
        row_sum_slack,
        quadratic_form_slack: qf,
        derivative_identity_error,
        samples: phis.len(),
        passed,
    })
}

/// Compares `Ċ_t` and `C̈_t` from central differences in `t` with the
/// closed forms.
pub fn derivative_identity_error(a: &DMatrix<f64>, t: f64) -> Result<f64> {
    let h = 1e-3 * t;
    let c = covariance_t(a, t)?;
    let cp = covariance_t(a, t + h)?;
    let cm = covariance_t(a, t - h)?;
    let cp2 = covariance_t(a, t + 2.0 * h)?;
    let cm2 = covariance_t(a, t - 2.0 * h)?;
    // Fourth-order stencils.
    let dot_fd = (&cm2 - &cp2 + (&cp - &cm) * 8.0) / (12.0 * h);
    let ddot_fd = ((&cp + &cm) * 16.0 - &cp2 - &cm2 - &c * 30.0) / (12.0 * h * h);
    let dot = &c * &c / (t * t);
    let ddot = -(a * &c * &dot) * (2.0 / t);
    let e1 = (&dot_fd - &dot).amax() / dot.amax();
    let e2 = (&ddot_fd - &ddot).amax() / ddot.amax().max(1e-300);
    Ok(e1.max(e2))
}
