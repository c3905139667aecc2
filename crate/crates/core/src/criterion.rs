//! Log-Sobolev criterion integral over a susceptibility profile, the closed
//! form lattice bound for single-scale measures, and the trial-function upper
//! bound on the spectral gap.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{batch_means, gauss_legendre};
use crate::sampler::SampleStream;
use crate::skeleton::{Provenance, SusceptibilityProfile, TailRule};

/// `κ̇_t = 1/t − χ_t/t²`.
pub fn kappa_dot(t: f64, chi_t: f64) -> f64 {
    1.0 / t - chi_t / (t * t)
}

/// Gauss–Legendre order per grid cell of the outer integral.
const CELL_ORDER: usize = 4;
/// Sub-cells per grid cell.
const SUBCELLS: usize = 1;

/// Outer integrals above this are reported as divergent.
const DIVERGENCE_CEILING: f64 = 1e300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureDiagnostics {
    pub cells: usize,
    /// `∫₀^{t_min} e^{−2κ_t} dt` majorant.
    pub head: f64,
    /// Grid part of the outer integral.
    pub body: f64,
    /// `∫_{t_max}^∞ e^{−2κ_t} dt` from the tail rule.
    pub tail: f64,
    /// Exponent `α` of the head extrapolation `r(s) ∝ s^α` on `(0, t_min)`.
    pub head_exponent: f64,
    /// `∫₀^{t_min} r(s)/s² ds` under that extrapolation.
    pub head_r_integral: f64,
    /// Relative change of the integral when every other grid point is dropped.
    pub coarse_rel_change: f64,
    /// Relative change when every cell is split in two at fixed profile.
    pub refined_rel_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsiBoundReport {
    /// `1/kappa_integral`; `None` when the integral diverges or is not certified.
    pub gamma_lower: Option<f64>,
    pub kappa_integral: f64,
    /// Same computation on `χ + 3·stderr`.
    pub gamma_lower_conservative: Option<f64>,
    /// `1/χ_∞` when an estimate of `χ_∞` is attached.
    pub gamma_upper: Option<f64>,
    pub gamma_upper_stderr: Option<f64>,
    pub profile_provenance: Vec<Provenance>,
    pub tail: TailRule,
    /// First grid point with `κ̇_t ≤ 0`.
    pub first_nondecay_t: Option<f64>,
    pub diagnostics: Option<QuadratureDiagnostics>,
    pub divergence: Option<String>,
}

impl LsiBoundReport {
    /// Attaches the spectral-gap upper bound `1/χ̂` with its delta-method error.
    pub fn with_upper(mut self, chi_hat: f64, chi_stderr: f64) -> Self {
        self.gamma_upper = Some(1.0 / chi_hat);
        self.gamma_upper_stderr = Some(chi_stderr / (chi_hat * chi_hat));
        self
    }

    /// `γ_lower ≤ γ_upper + k·stderr` whenever both are present.
    pub fn ordered(&self, k: f64) -> bool {
        match (self.gamma_lower, self.gamma_upper) {
            (Some(lo), Some(up)) => lo <= up + k * self.gamma_upper_stderr.unwrap_or(0.0),
            _ => true,
        }
    }
}

/// Cumulative `R(t) = ∫₀^t r(s)/s² ds` with `r` linear in `u = log s` per cell.
struct Remainder {
    u: Vec<f64>,
    r: Vec<f64>,
    /// `R` at each grid point, head included.
    cum: Vec<f64>,
}

/// `∫_{u0}^{u1} (a + b(u − u0)) e^{−u} du`.
fn lin_exp_integral(a: f64, b: f64, u0: f64, u1: f64) -> f64 {
    let h = u1 - u0;
    let e0 = (-u0).exp();
    let em = (-h).exp_m1(); // e^{−h} − 1
    // ∫₀^h (a + b v) e^{−v} dv = a(1 − e^{−h}) + b(1 − e^{−h} − h e^{−h})
    e0 * (-(a + b) * em - b * h * (-h).exp())
}

impl Remainder {
    fn new(t: &[f64], r: &[f64], head: f64) -> Self {
        let u: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let mut cum = Vec::with_capacity(t.len());
        cum.push(head);
        for i in 1..t.len() {
            let b = (r[i] - r[i - 1]) / (u[i] - u[i - 1]);
            cum.push(cum[i - 1] + lin_exp_integral(r[i - 1], b, u[i - 1], u[i]));
        }
        Remainder { u, r: r.to_vec(), cum }
    }

    /// `R` at `u` inside cell `i`.
    fn at(&self, i: usize, u: f64) -> f64 {
        let b = (self.r[i + 1] - self.r[i]) / (self.u[i + 1] - self.u[i]);
        self.cum[i] + lin_exp_integral(self.r[i], b, self.u[i], u)
    }
}

struct Evaluation {
    integral: f64,
    diag: QuadratureDiagnostics,
}

fn evaluate(t: &[f64], chi: &[f64], m2: f64, tail: TailRule, subcells: usize) -> std::result::Result<Evaluation, String> {
    let n = t.len();
    // Differences at the rounding level of χ are treated as exact zeros.
    let r: Vec<f64> = (0..n)
        .map(|i| {
            let v = chi[i] - 1.0 / (m2 + 1.0 / t[i]);
            if v.abs() <= 8.0 * f64::EPSILON * chi[i] { 0.0 } else { v }
        })
        .collect();
    // Head: r(s) = r(t₀)(s/t₀)^α on (0, t₀), α from the first two points.
    let (head_exponent, head_r) = if r[0] == 0.0 {
        (f64::INFINITY, 0.0)
    } else if n >= 2 && r[1] != 0.0 && r[0].signum() == r[1].signum() {
        let alpha = (r[1] / r[0]).ln() / (t[1] / t[0]).ln();
        if alpha <= 1.0 {
            return Err(format!(
                "remainder decays like s^{alpha:.3} near the first grid point; ∫ r/s² diverges at 0"
            ));
        }
        (alpha, r[0] / (t[0] * (alpha - 1.0)))
    } else {
        return Err("cannot extrapolate the remainder below the first grid point".into());
    };
    let rem = Remainder::new(t, &r, head_r);
    let gauss = |tt: f64| (m2 * tt + 1.0).powi(-2);
    let head = t[0] / (m2 * t[0] + 1.0) * (2.0 * head_r.max(0.0)).exp();
    let (x, w) = gauss_legendre(CELL_ORDER);
    let mut body = 0.0;
    for i in 0..n - 1 {
        let h = (rem.u[i + 1] - rem.u[i]) / subcells as f64;
        for k in 0..subcells {
            let u0 = rem.u[i] + k as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                let u = u0 + 0.5 * h * (xi + 1.0);
                let tt = u.exp();
                body += 0.5 * h * wi * gauss(tt) * (2.0 * rem.at(i, u)).exp() * tt;
            }
        }
    }
    let t_max = t[n - 1];
    let kappa_max = (m2 * t_max + 1.0).ln() - rem.cum[n - 1];
    let tail_value = match tail {
        TailRule::Gaussian { m2: mt } => (-2.0 * kappa_max).exp() * (mt * t_max + 1.0) / mt,
        TailRule::Cap { chi_bar } => {
            let x = 2.0 * chi_bar / t_max;
            let factor = if x > 0.0 { t_max * t_max * x.exp_m1() / (2.0 * chi_bar) } else { t_max };
            (-2.0 * kappa_max).exp() * factor
        }
        TailRule::None => return Err("no tail rule beyond the last grid point".into()),
    };
    let integral = head + body + tail_value;
    if !(integral.is_finite() && integral < DIVERGENCE_CEILING) {
        return Err("criterion integral overflowed".into());
    }
    Ok(Evaluation {
        integral,
        diag: QuadratureDiagnostics {
            cells: n - 1,
            head,
            body,
            tail: tail_value,
            head_exponent,
            head_r_integral: head_r,
            coarse_rel_change: 0.0,
            refined_rel_change: 0.0,
        },
    })
}

/// Lower bound on the log-Sobolev constant from `1/γ ≤ ∫₀^∞ e^{−2κ_t} dt`.
/// `χ` is split as `1/(m² + 1/t) + r(t)` with `m² = profile.m2_ref`; the
/// Gaussian part of `κ_t` is exact, `∫ r/s²` is exact for `r` piecewise
/// linear in `log t`.
pub fn lsi_lower_bound(profile: &SusceptibilityProfile) -> Result<LsiBoundReport> {
    profile.validate()?;
    let t = &profile.t_grid;
    let m2 = profile.m2_ref;
    let first_nondecay_t = t.iter().zip(&profile.chi).find(|(tt, c)| kappa_dot(**tt, **c) <= 0.0).map(|(tt, _)| *tt);
    let mut report = LsiBoundReport {
        gamma_lower: None,
        kappa_integral: f64::INFINITY,
        gamma_lower_conservative: None,
        gamma_upper: None,
        gamma_upper_stderr: None,
        profile_provenance: profile.provenance.clone(),
        tail: profile.tail,
        first_nondecay_t,
        diagnostics: None,
        divergence: None,
    };
    if let TailRule::Gaussian { m2 } | TailRule::Cap { chi_bar: m2 } = profile.tail {
        if !(m2 > 0.0 && m2.is_finite()) {
            return Err(Error::Config("tail parameter must be positive and finite".into()));
        }
    }
    match evaluate(t, &profile.chi, m2, profile.tail, SUBCELLS) {
        Ok(mut ev) => {
            if t.len() >= 5 {
                let tc: Vec<f64> = t.iter().step_by(2).copied().collect();
                let cc: Vec<f64> = profile.chi.iter().step_by(2).copied().collect();
                if let Ok(coarse) = evaluate(&tc, &cc, m2, profile.tail, SUBCELLS) {
                    ev.diag.coarse_rel_change = (coarse.integral - ev.integral).abs() / ev.integral;
                }
            }
            if let Ok(fine) = evaluate(t, &profile.chi, m2, profile.tail, 2 * SUBCELLS) {
                ev.diag.refined_rel_change = (fine.integral - ev.integral).abs() / ev.integral;
            }
            report.kappa_integral = ev.integral;
            report.gamma_lower = Some(1.0 / ev.integral);
            report.diagnostics = Some(ev.diag);
        }
        Err(msg) => {
            let where_ = first_nondecay_t.map(|tt| format!("; e^(-2κ) stops decaying in the decade of t = 1e{}", tt.log10().floor()));
            report.divergence = Some(format!("{msg}{}", where_.unwrap_or_default()));
            return Ok(report);
        }
    }
    let inflated: Vec<f64> = profile.chi.iter().zip(&profile.stderr).map(|(c, s)| c + 3.0 * s).collect();
    if profile.stderr.iter().any(|s| *s > 0.0) {
        report.gamma_lower_conservative = evaluate(t, &inflated, m2, profile.tail, SUBCELLS).ok().map(|e| 1.0 / e.integral);
    } else {
        report.gamma_lower_conservative = report.gamma_lower;
    }
    Ok(report)
}

/// `1/γ ≤ e²/(2|ν|+1) + (2|ν|+1)³ e^{2 + 2(2|ν|+1)χ}` for the single-scale
/// measure with quartic coupling `g > 0`, mass term `ν` and susceptibility `χ`.
/// The value does not depend on `g`.
pub fn lattice_phi4_bound(g: f64, nu: f64, chi: f64) -> Result<f64> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::Config(format!("quartic coupling must be positive, got {g}")));
    }
    if !(chi > 0.0) || !nu.is_finite() {
        return Err(Error::Domain("need chi > 0 and finite nu".into()));
    }
    let k = 2.0 * nu.abs() + 1.0;
    Ok(std::f64::consts::E.powi(2) / k + k.powi(3) * (2.0 + 2.0 * k * chi).exp())
}

/// Trial-function check of `γ ≤ 1/χ` with `F = ε^d L^{−d/2} Σ_x φ_x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralGapCheck {
    pub gamma_upper: f64,
    /// Empirical `var(F)` and its batch-means error, when a stream is supplied.
    pub var_f: Option<f64>,
    pub var_f_stderr: Option<f64>,
    /// `|var(F) − χ̂| ≤ 3·√(se_F² + se_χ²)`.
    pub var_matches: Option<bool>,
    /// `D(F)` from the weights; equals 1.
    pub dirichlet_form: f64,
}

/// `D(F) = w^{−1} N (w/N)`, the Dirichlet form of the trial function with
/// susceptibility weight `w` on `N` sites.
pub fn trial_dirichlet_form(weight: f64, sites: usize) -> f64 {
    let n = sites as f64;
    (1.0 / weight) * n * (weight / n)
}

pub fn spectral_gap_upper(chi_hat: f64, chi_stderr: f64, stream: Option<&SampleStream>) -> Result<SpectralGapCheck> {
    if !(chi_hat > 0.0 && chi_hat.is_finite()) {
        return Err(Error::Domain(format!("susceptibility must be positive, got {chi_hat}")));
    }
    let mut out = SpectralGapCheck {
        gamma_upper: 1.0 / chi_hat,
        var_f: None,
        var_f_stderr: None,
        var_matches: None,
        dirichlet_form: 1.0,
    };
    if let Some(s) = stream {
        out.dirichlet_form = trial_dirichlet_form(s.chi_weight, s.sites);
        let scale = s.chi_weight / s.sites as f64;
        let series = s.total_field_series();
        let all: Vec<f64> = series.iter().flatten().copied().collect();
        if all.is_empty() {
            return Err(Error::SamplingQuality("empty sample stream".into()));
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let stats: Vec<_> = series
            .iter()
            .map(|c| batch_means(&c.iter().map(|m| scale * (m - mean).powi(2)).collect::<Vec<_>>(), 16))
            .collect();
        let pooled = crate::numerics::pool(&stats);
        out.var_f = Some(pooled.mean);
        out.var_f_stderr = Some(pooled.stderr);
        let tol = 3.0 * (pooled.stderr.powi(2) + chi_stderr.powi(2)).sqrt();
        out.var_matches = Some((pooled.mean - chi_hat).abs() <= tol.max(1e-12 * chi_hat));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::ScaleGrid;

    #[test]
    fn kappa_dot_examples() {
        assert!((kappa_dot(2.0, 2.0 / 3.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(kappa_dot(3.0, 3.0), 0.0);
        assert_eq!(kappa_dot(1.0, 0.5), 0.5);
    }

    #[test]
    fn gaussian_profiles_are_exact() {
        let grid = ScaleGrid::default().points().unwrap();
        for m2 in [0.25, 1.0, 4.0] {
            let p = SusceptibilityProfile::gaussian(m2, &grid).unwrap();
            let r = lsi_lower_bound(&p).unwrap();
            let g = r.gamma_lower.unwrap();
            assert!((g / m2 - 1.0).abs() < 1e-8, "m2={m2}: {g}");
        }
    }

    #[test]
    fn lattice_bound_examples() {
        let e = std::f64::consts::E;
        let v = lattice_phi4_bound(1.0, 0.0, 1.0).unwrap();
        assert!((v - 61.9872).abs() < 1e-4);
        let v = lattice_phi4_bound(1.0, -1.0, 2.0).unwrap();
        let indep = e * e / 3.0 + 27.0 * (14.0f64).exp();
        assert!((v / indep - 1.0).abs() < 1e-14);
    }

    #[test]
    fn linear_growth_without_tail_is_reported() {
        let t: Vec<f64> = (0..50).map(|i| 10f64.powf(-2.0 + i as f64 * 0.1)).collect();
        let p = SusceptibilityProfile {
            chi: t.iter().map(|t| 2.0 * t).collect(),
            provenance: vec![Provenance::McEstimate; t.len()],
            stderr: vec![0.0; t.len()],
            t_grid: t,
            tail: TailRule::None,
            m2_ref: 1.0,
        };
        let r = lsi_lower_bound(&p).unwrap();
        assert!(r.gamma_lower.is_none());
        assert!(r.divergence.is_some());
        assert_eq!(r.first_nondecay_t, Some(0.01));
    }

    #[test]
    fn trial_function_has_unit_dirichlet_form() {
        for (w, n) in [(1.0, 1), (0.25, 16), (1.0 / 512.0, 4096)] {
            assert!((trial_dirichlet_form(w, n) - 1.0).abs() < 1e-14);
        }
    }
}
