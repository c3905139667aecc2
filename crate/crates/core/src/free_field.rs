//! Free-field covariances `C_t = (−Δ^ε + m² + 1/t)^{-1}`, counterterms and
//! the counterterm gaps between scale `t` and `t = ∞`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Field, LatticeSpec};

/// `m²` together with a scale `t ∈ (0, ∞]`; `t = ∞` is stored as `inv_t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassSchedule {
    m2: f64,
    inv_t: f64,
}

impl MassSchedule {
    pub fn new(m2: f64, t: f64) -> Result<Self> {
        if !(m2.is_finite() && m2 > 0.0) {
            return Err(Error::Config(format!("m2 must be positive and finite, got {m2}")));
        }
        if t.is_nan() || t <= 0.0 {
            return Err(Error::Config(format!("scale t must be positive, got {t}")));
        }
        Ok(MassSchedule { m2, inv_t: 1.0 / t })
    }

    pub fn infinite(m2: f64) -> Result<Self> {
        Self::new(m2, f64::INFINITY)
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// `t`, possibly `+∞`.
    pub fn t(&self) -> f64 {
        if self.inv_t == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.inv_t
        }
    }

    pub fn inv_t(&self) -> f64 {
        self.inv_t
    }

    pub fn is_infinite(&self) -> bool {
        self.inv_t == 0.0
    }

    /// `m²_t = m² + 1/t`.
    pub fn m2_t(&self) -> f64 {
        self.m2 + self.inv_t
    }
}

/// Translation-invariant kernel `C_t(x) = C_t(0, x)` with its Fourier multipliers.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    pub spec: LatticeSpec,
    pub schedule: MassSchedule,
    pub values: Field,
    /// `1/(m²_t + θ(k))` in FFT index order.
    pub fourier: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceMoments {
    pub l1: f64,
    pub l2_sq: f64,
    pub c2_l1: f64,
    pub c3_l1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountertermReport {
    pub a_eps: f64,
    pub tadpole: f64,
    pub sunset: f64,
    pub eta_t: f64,
    pub gamma_t: f64,
}

pub fn covariance(spec: &LatticeSpec, schedule: MassSchedule) -> CovarianceKernel {
    let m2t = schedule.m2_t();
    let fourier: Vec<f64> = spec.thetas().into_iter().map(|th| 1.0 / (m2t + th)).collect();
    let values = spec.kernel_from_multiplier(|th| 1.0 / (m2t + th));
    CovarianceKernel {
        spec: spec.clone(),
        schedule,
        values,
        fourier,
    }
}

impl CovarianceKernel {
    pub fn at_origin(&self) -> f64 {
        self.values[0]
    }

    /// `C_t^n` pointwise.
    pub fn power(&self, n: i32) -> Field {
        self.values.map(|v| v.powi(n))
    }
}

pub fn covariance_moments(kernel: &CovarianceKernel) -> CovarianceMoments {
    let spec = &kernel.spec;
    let w = spec.volume_weight();
    let c = &kernel.values.0;
    // C > 0, so the L¹ norms are plain weighted sums.
    let l1 = w * c.iter().sum::<f64>();
    let l2_sq = w * c.iter().map(|v| v * v).sum::<f64>();
    let c3_l1 = w * c.iter().map(|v| v * v * v).sum::<f64>();
    CovarianceMoments {
        l1,
        l2_sq,
        c2_l1: l2_sq,
        c3_l1,
    }
}

/// `a^ε(λ, m²) = −3λ C_∞(0) + 6λ² ‖C_∞³‖_{L¹}`, reported at `t = ∞` (zero gaps).
pub fn counterterm(spec: &LatticeSpec, lambda: f64, m2: f64) -> Result<CountertermReport> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let kernel = covariance(spec, MassSchedule::infinite(m2)?);
    let tadpole = kernel.at_origin();
    let sunset = covariance_moments(&kernel).c3_l1;
    Ok(CountertermReport {
        a_eps: -3.0 * lambda * tadpole + 6.0 * lambda * lambda * sunset,
        tadpole,
        sunset,
        eta_t: 0.0,
        gamma_t: 0.0,
    })
}

/// Counterterm together with the gaps at scale `t`.
pub fn counterterm_at(spec: &LatticeSpec, lambda: f64, m2: f64, t: f64) -> Result<CountertermReport> {
    let mut report = counterterm(spec, lambda, m2)?;
    let (eta, gamma) = counterterm_gaps(spec, m2, t)?;
    report.eta_t = eta;
    report.gamma_t = gamma;
    Ok(report)
}

/// `(η_t, γ_t)`. Both are formed from the difference multiplier
/// `(1/t)/((m²+θ)(m²_t+θ))`, so no large cancellations occur.
pub fn counterterm_gaps(spec: &LatticeSpec, m2: f64, t: f64) -> Result<(f64, f64)> {
    let sched = MassSchedule::new(m2, t)?;
    let inv_t = sched.inv_t();
    if inv_t == 0.0 {
        return Ok((0.0, 0.0));
    }
    let diff_mult = |th: f64| inv_t / ((m2 + th) * (m2 + inv_t + th));
    let eta = spec.thetas().into_iter().map(diff_mult).sum::<f64>() / spec.volume();
    let diff = spec.kernel_from_multiplier(diff_mult);
    let c_inf = covariance(spec, MassSchedule::infinite(m2)?).values;
    let c_t = covariance(spec, sched).values;
    let w = spec.volume_weight();
    let gamma = w * diff
        .0
        .iter()
        .zip(c_inf.0.iter().zip(&c_t.0))
        .map(|(dd, (a, b))| dd * (a * a + a * b + b * b))
        .sum::<f64>();
    Ok((eta.max(0.0), gamma.max(0.0)))
}

/// Shape functions of the counterterm-gap bounds.
pub mod shapes {
    /// `η_t` shape: `log(1 + 1/(m²t))` in d=2, `m(√(1+1/(tm²)) − 1)` in d=3.
    pub fn eta(d: usize, m2: f64, t: f64) -> f64 {
        let x = 1.0 / (m2 * t);
        if d == 2 {
            x.ln_1p()
        } else {
            // m(√(1+x) − 1) = m·x/(√(1+x) + 1)
            m2.sqrt() * x / ((1.0 + x).sqrt() + 1.0)
        }
    }

    /// `γ_t` shape: `1/(m²(m²t+1))` in d=2, `log(1 + 1/(m²t))` in d=3.
    pub fn gamma(d: usize, m2: f64, t: f64) -> f64 {
        if d == 2 {
            1.0 / (m2 * (m2 * t + 1.0))
        } else {
            (1.0 / (m2 * t)).ln_1p()
        }
    }

    /// `‖C⋆ψ‖_{L¹}`: `m^{-4}` in d=2, `m^{-1/2} + m^{-5/2}` in d=3 (mass `m = m_t`).
    pub fn c_psi_l1(d: usize, m: f64) -> f64 {
        if d == 2 {
            m.powi(-4)
        } else {
            m.powf(-0.5) + m.powf(-2.5)
        }
    }

    /// `‖C⋆ψ‖_{L²}`: `m^{-3}` in d=2, `m^{-1/2}` in d=3.
    pub fn c_psi_l2(d: usize, m: f64) -> f64 {
        if d == 2 {
            m.powi(-3)
        } else {
            m.powf(-0.5)
        }
    }

    /// `‖C(C²⋆C²)‖_{L¹}`: `m^{-4}` in d=2, `m^{-1}` in d=3.
    pub fn bubble5(d: usize, m: f64) -> f64 {
        if d == 2 {
            m.powi(-4)
        } else {
            1.0 / m
        }
    }

    /// `‖C²‖_{L¹}`: `m^{-2}` in d=2, `m^{-1}` in d=3.
    pub fn c2(d: usize, m: f64) -> f64 {
        if d == 2 {
            m.powi(-2)
        } else {
            1.0 / m
        }
    }
}

/// Single-constant fit of `value ≤ c·shape` over a parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeFit {
    /// `sup value/shape`.
    pub constant: f64,
    pub ratios: Vec<f64>,
}

pub fn fit_shape(values: &[f64], shape: &[f64]) -> Result<ShapeFit> {
    crate::error::check_len(values.len(), shape.len())?;
    if values.is_empty() {
        return Err(Error::Config("empty grid for shape fit".into()));
    }
    let mut ratios = Vec::with_capacity(values.len());
    for (v, s) in values.iter().zip(shape) {
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("shape value {s} is not positive")));
        }
        ratios.push(v / s);
    }
    let constant = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(ShapeFit { constant, ratios })
}

/// Least-squares fit of `a^ε` on the divergent basis of the given dimension:
/// d=2 `[1, λ log ε^{-2}]`, d=3 `[1, λ ε^{-1}, λ² log ε^{-2}]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Intercept first, then the divergent coefficients.
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl ScalingFit {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }
}

pub fn scaling_basis(d: usize, lambda: f64, eps: f64) -> Vec<f64> {
    let log = (eps.powi(-2)).ln();
    if d == 2 {
        vec![1.0, lambda * log]
    } else {
        vec![1.0, lambda / eps, lambda * lambda * log]
    }
}

pub fn fit_counterterm_scaling(d: usize, lambda: f64, eps: &[f64], a_eps: &[f64]) -> Result<ScalingFit> {
    crate::error::check_len(eps.len(), a_eps.len())?;
    let rows: Vec<Vec<f64>> = eps.iter().map(|&e| scaling_basis(d, lambda, e)).collect();
    let p = rows.first().map(Vec::len).unwrap_or(0);
    if rows.len() < p || p == 0 {
        return Err(Error::Config(format!("need at least {p} refinement levels")));
    }
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(a_eps);
    let svd = x.clone().svd(true, true);
    let beta = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::Domain(format!("scaling fit failed: {e}")))?;
    let resid = &y - &x * &beta;
    Ok(ScalingFit {
        coefficients: beta.iter().copied().collect(),
        residuals: resid.iter().copied().collect(),
    })
}
