//! Skeleton-inequality bound engine: diagram norms of the free covariance,
//! falsification of the two-sided skeleton bounds on sampled correlations,
//! the `L¹∩L∞` master recursion for `E = S − C`, the small-scale window and
//! the susceptibility-bound polynomials.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::free_field::{counterterm, counterterm_gaps, covariance, CovarianceKernel, MassSchedule};
use crate::lattice::{convolve, delta_at_origin, lp_norm, Field, LatticeSpec};
use crate::numerics::jackknife_stderr;
use crate::sampler::{CorrelationEstimate, Normalisation, Phi4Params};

/// Norms of free-covariance diagrams at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagramNorms {
    /// `ε^d Σ_x ψ(x)`, zero by construction.
    pub psi_mass: f64,
    pub psi_l1: f64,
    pub c_psi_l1: f64,
    pub c_psi_l2: f64,
    /// `‖C(C²⋆C²)‖_{L¹}`.
    pub bubble5: f64,
    /// `‖C(C⋆C²)‖_{L¹}`.
    pub cc2c: f64,
    /// `‖C(C⋆C)‖_{L¹}`.
    pub ccc: f64,
    pub c_l1: f64,
    pub c2_l1: f64,
    pub c3_l1: f64,
    /// `max_k |ψ̂(k)|`.
    pub psi_hat_max: f64,
}

fn weighted_sum(f: &Field, spec: &LatticeSpec) -> f64 {
    spec.volume_weight() * f.values().iter().sum::<f64>()
}

pub fn diagram_norms(kernel: &CovarianceKernel) -> Result<DiagramNorms> {
    let spec = &kernel.spec;
    let c = &kernel.values;
    let c2 = c.map(|v| v * v);
    let c3 = c.map(|v| v * v * v);
    let c3_l1 = weighted_sum(&c3, spec);
    let delta = delta_at_origin(spec);
    let psi = c3.zip_map(&delta, |a, d| a - d * c3_l1)?;
    let cpsi = convolve(c, &psi, spec)?;
    let c2c2 = convolve(&c2, &c2, spec)?;
    let cc2 = convolve(c, &c2, spec)?;
    let cc = convolve(c, c, spec)?;
    let psi_hat_max = spec.forward(&psi).iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    Ok(DiagramNorms {
        psi_mass: weighted_sum(&psi, spec),
        psi_l1: lp_norm(&psi, 1.0, spec)?,
        c_psi_l1: lp_norm(&cpsi, 1.0, spec)?,
        c_psi_l2: lp_norm(&cpsi, 2.0, spec)?,
        bubble5: weighted_sum(&c.zip_map(&c2c2, |a, b| a * b)?, spec),
        cc2c: weighted_sum(&c.zip_map(&cc2, |a, b| a * b)?, spec),
        ccc: weighted_sum(&c.zip_map(&cc, |a, b| a * b)?, spec),
        c_l1: weighted_sum(c, spec),
        c2_l1: weighted_sum(&c2, spec),
        c3_l1,
        psi_hat_max,
    })
}

// ---------------------------------------------------------------------------
// Skeleton bounds on sampled correlations

/// Per-site slack of `L ≤ S − C ≤ U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfsReport {
    pub coords: Vec<Vec<usize>>,
    /// `(S − C) − L`.
    pub lower_slack: Vec<f64>,
    /// `U − (S − C)`.
    pub upper_slack: Vec<f64>,
    pub lower_stderr: Vec<f64>,
    pub upper_stderr: Vec<f64>,
    /// `U − L ≥ 0` pointwise.
    pub bound_gap: Vec<f64>,
    pub violations: usize,
    /// Most negative slack in units of its standard error.
    pub worst_z: f64,
}

impl BfsReport {
    /// `r_1..r_d,lower_slack,upper_slack,stderr` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        let d = self.coords.first().map(Vec::len).unwrap_or(1);
        let head: Vec<String> = (1..=d).map(|a| format!("r_{a}")).collect();
        writeln!(out, "{},lower_slack,upper_slack,stderr", head.join(","))?;
        for i in 0..self.coords.len() {
            let cs: Vec<String> = self.coords[i].iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{}",
                cs.join(","),
                crate::lattice::fmt_f64(self.lower_slack[i]),
                crate::lattice::fmt_f64(self.upper_slack[i]),
                crate::lattice::fmt_f64(self.lower_stderr[i].max(self.upper_stderr[i]))
            )?;
        }
        Ok(())
    }
}

/// `(U, L)` of the skeleton bounds for a given two-point function `S`.
pub fn bfs_sides(s: &Field, kernel: &CovarianceKernel, lambda: f64, mu: f64, m2: f64) -> Result<(Field, Field)> {
    let spec = &kernel.spec;
    let c = &kernel.values;
    check_len(spec.sites(), s.len())?;
    let a_eps = counterterm(spec, lambda, m2)?.a_eps;
    let cs = convolve(c, s, spec)?;
    let s3 = s.map(|v| v * v * v);
    let cs3s = convolve(&convolve(c, &s3, spec)?, s, spec)?;
    let s2 = s.map(|v| v * v);
    let q = s.zip_map(&convolve(&s2, &s2, spec)?, |a, b| a * b)?;
    let cqs = convolve(&convolve(c, &q, spec)?, s, spec)?;
    let s0 = s[0];
    let n = spec.sites();
    let mass = a_eps + mu - m2;
    let upper = Field(
        (0..n)
            .map(|x| -3.0 * lambda * s0 * cs[x] + 6.0 * lambda * lambda * cs3s[x] - mass * cs[x])
            .collect(),
    );
    let lower = Field((0..n).map(|x| upper[x] - 54.0 * lambda.powi(3) * cqs[x]).collect());
    Ok((upper, lower))
}

fn slacks(s: &Field, kernel: &CovarianceKernel, params: &Phi4Params) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (u, l) = bfs_sides(s, kernel, params.lambda, params.mu, params.m2)?;
    let n = s.len();
    let e: Vec<f64> = (0..n).map(|x| s[x] - kernel.values[x]).collect();
    Ok((
        (0..n).map(|x| e[x] - l[x]).collect(),
        (0..n).map(|x| u[x] - e[x]).collect(),
        (0..n).map(|x| u[x] - l[x]).collect(),
    ))
}

/// Checks both skeleton bounds with `S = ŝ`, errors by jackknife over batches.
pub fn verify_bfs(estimate: &CorrelationEstimate, kernel: &CovarianceKernel, params: &Phi4Params) -> Result<BfsReport> {
    if params.normalisation != Normalisation::Continuum {
        return Err(Error::Config("skeleton bounds apply to the continuum normalisation".into()));
    }
    if params.spec != kernel.spec {
        return Err(Error::Shape { expected: kernel.spec.sites(), got: params.spec.sites() });
    }
    let expect_m2t = params.m2 + 1.0 / params.t;
    if (kernel.schedule.m2_t() - expect_m2t).abs() > 1e-12 * expect_m2t {
        return Err(Error::Config("kernel scale does not match the model scale".into()));
    }
    check_len(kernel.spec.sites(), estimate.s_hat.len())?;
    let s = Field(estimate.s_hat.clone());
    let (lo, up, gap) = slacks(&s, kernel, params)?;
    let n = s.len();
    let nb = estimate.batches.len();
    let (lo_err, up_err) = if nb >= 2 {
        let mut reps_lo = vec![Vec::with_capacity(nb); n];
        let mut reps_up = vec![Vec::with_capacity(nb); n];
        for b in 0..nb {
            let loo = Field(
                (0..n)
                    .map(|r| {
                        (estimate.batches.iter().map(|bb| bb[r]).sum::<f64>() - estimate.batches[b][r])
                            / (nb - 1) as f64
                    })
                    .collect(),
            );
            let (l, u, _) = slacks(&loo, kernel, params)?;
            for x in 0..n {
                reps_lo[x].push(l[x]);
                reps_up[x].push(u[x]);
            }
        }
        (
            reps_lo.iter().map(|r| jackknife_stderr(r)).collect::<Vec<_>>(),
            reps_up.iter().map(|r| jackknife_stderr(r)).collect::<Vec<_>>(),
        )
    } else {
        (vec![0.0; n], vec![0.0; n])
    };
    let mut violations = 0;
    let mut worst_z = f64::INFINITY;
    for x in 0..n {
        for (sl, er) in [(lo[x], lo_err[x]), (up[x], up_err[x])] {
            if sl < -3.0 * er {
                violations += 1;
            }
            let z = if er > 0.0 { sl / er } else if sl >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
            worst_z = worst_z.min(z);
        }
    }
    Ok(BfsReport {
        coords: estimate.coords.clone(),
        lower_slack: lo,
        upper_slack: up,
        lower_stderr: lo_err,
        upper_stderr: up_err,
        bound_gap: gap,
        violations,
        worst_z,
    })
}

// ---------------------------------------------------------------------------
// Moment inputs of the recursion

/// Everything the recursion needs at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSet {
    pub t: f64,
    pub m2_t: f64,
    /// `‖C‖_{L¹} = 1/m²_t`.
    pub c1: f64,
    /// `‖C²‖_{L¹} = ‖C‖²_{L²}`.
    pub c2: f64,
    pub cc2c: f64,
    pub ccc: f64,
    pub b5: f64,
    pub cpsi1: f64,
    pub cpsi2: f64,
    pub eta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantProvenance {
    /// Exact lattice evaluation or the explicit coefficients 3, 6, 54.
    Explicit,
    /// A single constant times a bound shape, fitted over a refinement family.
    FittedC,
}

/// A named constant multiplying a bound shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NamedConstant {
    pub value: f64,
    pub provenance: ConstantProvenance,
}

/// Spec-free moments: `c · shape(m_t)` for every diagram, with one named
/// constant per diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeConstants {
    pub d: usize,
    pub c_c2: NamedConstant,
    pub c_b5: NamedConstant,
    pub c_cpsi1: NamedConstant,
    pub c_cpsi2: NamedConstant,
    pub c_eta: NamedConstant,
    pub c_gamma: NamedConstant,
}

impl ShapeConstants {
    /// Fits every constant as the supremum of `value/shape` over the
    /// lattices `eps_family` (torus side `side`) and scales `t_grid ∪ {∞}`.
    pub fn fit(d: usize, m2: f64, side: f64, eps_family: &[f64], t_grid: &[f64]) -> Result<Self> {
        use crate::free_field::shapes;
        let mut sup = [0.0_f64; 6];
        for &eps in eps_family {
            let spec = LatticeSpec::new(d, eps, side)?;
            for &t in t_grid.iter().chain(std::iter::once(&f64::INFINITY)) {
                let m = lattice_moments(&spec, m2, t)?;
                let mt = m.m2_t.sqrt();
                let mut ratios = [
                    m.c2 / shapes::c2(d, mt),
                    m.b5 / shapes::bubble5(d, mt),
                    m.cpsi1 / shapes::c_psi_l1(d, mt),
                    m.cpsi2 / shapes::c_psi_l2(d, mt),
                    0.0,
                    0.0,
                ];
                if t.is_finite() {
                    ratios[4] = m.eta / shapes::eta(d, m2, t);
                    ratios[5] = m.gamma / shapes::gamma(d, m2, t);
                }
                for (s, r) in sup.iter_mut().zip(ratios) {
                    *s = s.max(r);
                }
            }
        }
        let nc = |v: f64| NamedConstant { value: v, provenance: ConstantProvenance::FittedC };
        Ok(ShapeConstants {
            d,
            c_c2: nc(sup[0]),
            c_b5: nc(sup[1]),
            c_cpsi1: nc(sup[2]),
            c_cpsi2: nc(sup[3]),
            c_eta: nc(sup[4]),
            c_gamma: nc(sup[5]),
        })
    }

    pub fn moments(&self, m2: f64, t: f64) -> Result<MomentSet> {
        use crate::free_field::shapes;
        let sched = MassSchedule::new(m2, t)?;
        let d = self.d;
        let m2t = sched.m2_t();
        let mt = m2t.sqrt();
        let c1 = 1.0 / m2t;
        let c2 = self.c_c2.value * shapes::c2(d, mt);
        let (eta, gamma) = if sched.is_infinite() {
            (0.0, 0.0)
        } else {
            (self.c_eta.value * shapes::eta(d, m2, t), self.c_gamma.value * shapes::gamma(d, m2, t))
        };
        Ok(MomentSet {
            t,
            m2_t: m2t,
            c1,
            c2,
            // pointwise C(x)C(y) ≤ ½C(x)² + ½C(y)²
            cc2c: c2 * c2,
            ccc: c2 * c1,
            b5: self.c_b5.value * shapes::bubble5(d, mt),
            cpsi1: self.c_cpsi1.value * shapes::c_psi_l1(d, mt),
            cpsi2: self.c_cpsi2.value * shapes::c_psi_l2(d, mt),
            eta,
            gamma,
        })
    }
}

/// Exact lattice values of every recursion input.
pub fn lattice_moments(spec: &LatticeSpec, m2: f64, t: f64) -> Result<MomentSet> {
    let sched = MassSchedule::new(m2, t)?;
    let kernel = covariance(spec, sched);
    let dn = diagram_norms(&kernel)?;
    let (eta, gamma) = counterterm_gaps(spec, m2, t)?;
    Ok(MomentSet {
        t,
        m2_t: sched.m2_t(),
        c1: dn.c_l1,
        c2: dn.c2_l1,
        cc2c: dn.cc2c,
        ccc: dn.ccc,
        b5: dn.bubble5,
        cpsi1: dn.c_psi_l1,
        cpsi2: dn.c_psi_l2,
        eta,
        gamma,
    })
}

#[derive(Debug, Clone)]
pub enum MomentSource {
    Lattice(LatticeSpec),
    Shapes(ShapeConstants),
}

impl MomentSource {
    pub fn moments(&self, m2: f64, t: f64) -> Result<MomentSet> {
        match self {
            MomentSource::Lattice(spec) => lattice_moments(spec, m2, t),
            MomentSource::Shapes(c) => c.moments(m2, t),
        }
    }

    pub fn provenance(&self) -> ConstantProvenance {
        match self {
            MomentSource::Lattice(_) => ConstantProvenance::Explicit,
            MomentSource::Shapes(_) => ConstantProvenance::FittedC,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MomentSource::Lattice(s) => s.dim(),
            MomentSource::Shapes(c) => c.d,
        }
    }
}

// ---------------------------------------------------------------------------
// Master recursion

/// Bound on `‖Q‖_{L¹}` given `a ≥ ‖E‖_{L∞}`, `b ≥ ‖E‖_{L¹}`.
pub fn q_bound(m: &MomentSet, a: f64, b: f64) -> f64 {
    m.b5 + a * (m.c2 * m.c2 + 4.0 * m.cc2c)
        + a * a * (6.0 * m.c1 * m.c2 + 4.0 * m.ccc)
        + 2.0 * a * a * b * m.c2
        + 8.0 * a.powi(3) * m.c1 * m.c1
        + 5.0 * a.powi(3) * b * m.c1
        + a.powi(3) * b * b
}

/// `L∞` and `L¹` parts of each order of the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermBreakdown {
    pub order0: (f64, f64),
    pub order1: (f64, f64),
    pub order2: (f64, f64),
    pub order3: (f64, f64),
}

impl TermBreakdown {
    pub fn linf(&self) -> f64 {
        self.order0.0 + self.order1.0 + self.order2.0 + self.order3.0
    }

    pub fn l1(&self) -> f64 {
        self.order0.1 + self.order1.1 + self.order2.1 + self.order3.1
    }

    pub fn total(&self) -> f64 {
        self.linf() + self.l1()
    }
}

/// Right-hand side of the master recursion at one scale, as a function of
/// trial values of `‖E‖_{L∞}` and `‖E‖_{L¹}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MasterBound {
    pub lambda: f64,
    pub mu: f64,
    pub m2: f64,
    pub moments: MomentSet,
}

impl MasterBound {
    pub fn terms(&self, a: f64, b: f64) -> TermBreakdown {
        let m = &self.moments;
        let l = self.lambda;
        let (c1, c2) = (m.c1, m.c2);
        let cs_inf = c1 * a + c2;
        let cs_l1 = c1 * (b + c1);
        let dm = (self.mu - self.m2).abs();
        let order0 = (dm * cs_inf, dm * cs_l1);
        let order1 = (3.0 * l * (m.eta + a) * cs_inf, 3.0 * l * (m.eta + a) * cs_l1);
        let a_inf = 3.0 * a * c2 * c2 + 6.0 * a * a * c1 * c2 + 4.0 * a.powi(3) * c1 * c1 + a.powi(3) * b * c1;
        let a_l1 = c1 * (c1 + b) * (3.0 * a * c2 + 3.0 * a * a * c1 + a * a * b);
        let b_inf = m.gamma * cs_inf;
        let b_l1 = m.gamma * cs_l1;
        let p_inf = m.cpsi1 * a + m.cpsi2 * c2.sqrt();
        let p_l1 = m.cpsi1 * (b + c1);
        let k2 = 6.0 * l * l;
        let order2 = (k2 * (a_inf + b_inf + p_inf), k2 * (a_l1 + b_l1 + p_l1));
        let q = q_bound(m, a, b);
        let k3 = 54.0 * l.powi(3);
        let order3 = (k3 * q * (c2 + c1 * a), k3 * q * cs_l1);
        TermBreakdown { order0, order1, order2, order3 }
    }

    /// `F(e)` with `‖E‖_{L∞}, ‖E‖_{L¹} ≤ e`; non-decreasing in `e`.
    pub fn eval(&self, e: f64) -> f64 {
        self.terms(e, e).total()
    }

    /// Source term `s_t = 3λη_t‖C²‖_{L¹}` that survives as `t ↓ 0` in d=3.
    pub fn source(&self) -> f64 {
        3.0 * self.lambda * self.moments.eta * self.moments.c2
    }

    /// `f(e) = F(e) − s_t`.
    pub fn f(&self, e: f64) -> f64 {
        (self.eval(e) - self.source()).max(0.0)
    }
}

/// The master recursion bound function at scale `t`.
pub fn e_bound_l1linf(t: f64, lambda: f64, mu: f64, m2: f64, source: &MomentSource) -> Result<MasterBound> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(MasterBound { lambda, mu, m2, moments: source.moments(m2, t)? })
}

// ---------------------------------------------------------------------------
// Scale grids, c₀ and the small-scale window

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub per_decade: usize,
}

impl Default for ScaleGrid {
    fn default() -> Self {
        ScaleGrid { t_min: 1e-6, t_max: 1e6, per_decade: 200 }
    }
}

impl ScaleGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.t_min > 0.0 && self.t_max > self.t_min && self.per_decade > 0) {
            return Err(Error::Config("scale grid needs 0 < t_min < t_max and per_decade >= 1".into()));
        }
        let lo = self.t_min.log10();
        let hi = self.t_max.log10();
        let n = ((hi - lo) * self.per_decade as f64).round() as usize;
        Ok((0..=n).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / n as f64)).collect())
    }
}

/// Headroom on the observed supremum defining `c₀`.
pub const C0_HEADROOM: f64 = 1.1;

/// `c₀ = 1.1 · sup_t 3η_t‖C_t²‖_{L¹}` over the grid and `t = ∞`.
pub fn c0_constant(m2: f64, source: &MomentSource, grid: &[f64]) -> Result<f64> {
    let mut sup = 0.0_f64;
    for &t in grid {
        let m = source.moments(m2, t)?;
        sup = sup.max(3.0 * m.eta * m.c2);
    }
    Ok(C0_HEADROOM * sup)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowPoint {
    pub t: f64,
    /// `c₀λ/2 − f_t(2c₀λ)`.
    pub f_margin: f64,
    /// `c₀λ − s_t`.
    pub source_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowCertificate {
    /// Largest certified scale; `+∞` when every grid point and `t = ∞` pass.
    pub t0: f64,
    pub c0: f64,
    pub lambda: f64,
    /// `‖E‖_{L¹∩L∞} ≤ 2c₀λ` on `(0, t₀]`.
    pub e_bound: f64,
    pub points: Vec<WindowPoint>,
    /// Whether `sup_t 3η_t‖C²‖ ≤ c₀` held on the grid (the d=2 proviso).
    pub c0_check: bool,
    /// All-scale barrier, when one was sought and found.
    pub all_scales: Option<BarrierCertificate>,
}

/// Largest `t₀` on the grid with `f_t(2c₀λ) ≤ c₀λ/2` and `s_t ≤ c₀λ` for every
/// grid `t ≤ t₀`. With `c0 = None` the constant is computed on the grid.
pub fn small_scale_window(
    lambda: f64,
    mu: f64,
    m2: f64,
    source: &MomentSource,
    grid: &[f64],
    c0: Option<f64>,
) -> Result<WindowCertificate> {
    if grid.is_empty() {
        return Err(Error::Config("empty scale grid".into()));
    }
    let c0 = match c0 {
        Some(c) => c,
        None => c0_constant(m2, source, grid)?,
    };
    let mut points = Vec::new();
    let mut t0 = None;
    let mut sup_source = 0.0_f64;
    let mut all = true;
    let check = |t: f64| -> Result<WindowPoint> {
        let mb = e_bound_l1linf(t, lambda, mu, m2, source)?;
        Ok(WindowPoint {
            t,
            f_margin: 0.5 * c0 * lambda - mb.f(2.0 * c0 * lambda),
            source_margin: c0 * lambda - mb.source(),
        })
    };
    for (i, &t) in grid.iter().enumerate() {
        let p = check(t)?;
        sup_source = sup_source.max(c0 * lambda - p.source_margin);
        let ok = p.f_margin >= 0.0 && p.source_margin >= 0.0;
        points.push(p);
        if !ok && all {
            all = false;
            if i == 0 {
                return Err(Error::WindowEmpty(format!(
                    "certificate fails at the smallest grid scale t = {t:e}"
                )));
            }
            t0 = Some(grid[i - 1]);
        }
    }
    if all {
        let p = check(f64::INFINITY)?;
        let ok = p.f_margin >= 0.0 && p.source_margin >= 0.0;
        points.push(p);
        t0 = Some(if ok { f64::INFINITY } else { *grid.last().unwrap() });
    }
    let c0_check = lambda == 0.0 || sup_source <= c0 * lambda * (1.0 + 1e-12);
    Ok(WindowCertificate {
        t0: t0.unwrap(),
        c0,
        lambda,
        e_bound: 2.0 * c0 * lambda,
        points,
        c0_check,
        all_scales: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierCertificate {
    /// `B` with `F_t(B) < B` at every grid scale and at `t = ∞`.
    pub barrier: f64,
    /// `B/λ`, the all-scale constant `c(μ)`.
    pub c_mu: f64,
    /// `min_t (B − F_t(B))`.
    pub margin: f64,
}

const BARRIER_LADDER: f64 = 1.090_507_732_665_257_7; // 2^{1/8}

/// Smallest `B` on a geometric ladder with `F_t(B) < B` for every grid `t`
/// and `t = ∞`. Since `‖E‖ → 0` as `t ↓ 0` and is continuous in `t`, such a
/// barrier is never crossed, so `‖E‖_{L¹∩L∞} < B` at every scale.
pub fn all_scale_barrier(
    lambda: f64,
    mu: f64,
    m2: f64,
    source: &MomentSource,
    grid: &[f64],
) -> Result<BarrierCertificate> {
    if grid.is_empty() {
        return Err(Error::Config("empty scale grid".into()));
    }
    let bounds = grid
        .iter()
        .chain(std::iter::once(&f64::INFINITY))
        .map(|&t| e_bound_l1linf(t, lambda, mu, m2, source))
        .collect::<Result<Vec<_>>>()?;
    if lambda == 0.0 && mu == m2 {
        return Ok(BarrierCertificate { barrier: 0.0, c_mu: 0.0, margin: 0.0 });
    }
    let floor = bounds.iter().map(|mb| mb.eval(0.0)).fold(0.0_f64, f64::max).max(1e-300);
    let mut b = floor;
    for _ in 0..2000 {
        b *= BARRIER_LADDER;
        if !b.is_finite() {
            break;
        }
        let margin = bounds.iter().map(|mb| b - mb.eval(b)).fold(f64::INFINITY, f64::min);
        if margin > 0.0 {
            let c_mu = if lambda > 0.0 { b / lambda } else { f64::INFINITY };
            return Ok(BarrierCertificate { barrier: b, c_mu, margin });
        }
    }
    Err(Error::WindowEmpty(format!("no all-scale barrier for lambda = {lambda}, mu = {mu}, m2 = {m2}")))
}

/// `sup_t p̃_t(λ)` over `grid ∪ {∞}`, with `‖E‖_{L∞}` input from the all-scale
/// barrier.
pub fn long_time_bound(
    lambda: f64,
    mu: f64,
    m2: f64,
    source: &MomentSource,
    grid: &[f64],
) -> Result<(f64, BarrierCertificate)> {
    let cert = all_scale_barrier(lambda, mu, m2, source, grid)?;
    let mut sup = 0.0_f64;
    for &t in grid.iter().chain(std::iter::once(&f64::INFINITY)) {
        let p = susceptibility_bound_polynomial(t, lambda, mu, m2, cert.barrier, source)?;
        sup = sup.max(p.eval(lambda));
    }
    Ok((sup, cert))
}

// ---------------------------------------------------------------------------
// Susceptibility polynomial

pub const MAX_FIXED_POINT_ITERATIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundPolynomial {
    /// `(power of λ, coefficient)`.
    pub coefficients: Vec<(u32, f64)>,
    pub provenance: ConstantProvenance,
    pub t: f64,
    pub d: usize,
    pub mu: f64,
    pub m2: f64,
    pub e_linf_input: f64,
    /// Fixed-point estimate of `‖E‖_{L¹}` used inside the coefficients.
    pub e_l1: f64,
    pub iterations: usize,
}

impl BoundPolynomial {
    pub fn eval(&self, lambda: f64) -> f64 {
        self.coefficients.iter().map(|(k, c)| c * lambda.powi(*k as i32)).sum()
    }

    pub fn degree(&self) -> u32 {
        self.coefficients.iter().filter(|(_, c)| *c != 0.0).map(|(k, _)| *k).max().unwrap_or(0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficients.iter().filter(|(k, _)| *k == 0).map(|(_, c)| c).sum()
    }
}

/// `R(b) = Σ_k λ^k ρ_k(b)`: the `L¹` part of the recursion with `‖E‖_{L∞}`
/// frozen at `a`.
fn l1_orders(mb: &MasterBound, a: f64, b: f64) -> [f64; 4] {
    let t = mb.terms(a, b);
    let l = mb.lambda;
    let div = |v: f64, k: i32| if l == 0.0 { 0.0 } else { v / l.powi(k) };
    [t.order0.1, div(t.order1.1, 1), div(t.order2.1, 2), div(t.order3.1, 3)]
}

/// Bound `p` on `‖S_t − C_t‖_{L¹}` given `‖E‖_{L¹∩L∞} ≤ e_linf_input`.
pub fn susceptibility_bound_polynomial(
    t: f64,
    lambda: f64,
    mu: f64,
    m2: f64,
    e_linf_input: f64,
    source: &MomentSource,
) -> Result<BoundPolynomial> {
    let mb = e_bound_l1linf(t, lambda, mu, m2, source)?;
    let a = e_linf_input;
    let r = |b: f64| mb.terms(a, b).l1();
    // Coefficients of R in b (cubic) by exact interpolation.
    let r0 = r(0.0);
    let (r1v, r2v, r3v) = (r(1.0) - r0, r(2.0) - r0, r(3.0) - r0);
    let c3 = (r3v - 3.0 * r2v + 3.0 * r1v) / 6.0;
    let c2 = (r2v - 2.0 * r1v) / 2.0 - 3.0 * c3;
    let c1 = r1v - c2 - c3;
    let mut b = e_linf_input;
    let mut best = b;
    let mut iterations = 0;
    let mut growth = 0;
    for _ in 0..MAX_FIXED_POINT_ITERATIONS {
        iterations += 1;
        let next = if c1 < 1.0 {
            (r0 + c2.max(0.0) * b * b + c3.max(0.0) * b.powi(3)) / (1.0 - c1.max(0.0))
        } else {
            r(b)
        };
        if !next.is_finite() {
            return Err(Error::BoundUnavailable(format!("fixed-point iteration overflowed at t = {t:e}")));
        }
        if next >= 2.0 * b && b > 0.0 {
            growth += 1;
            if growth >= 2 {
                return Err(Error::BoundUnavailable(format!(
                    "fixed-point iterate doubled twice in a row at t = {t:e}"
                )));
            }
        } else {
            growth = 0;
        }
        let converged = (next - b).abs() <= 1e-14 * b.max(1e-300);
        b = next;
        best = best.min(b);
        if converged {
            break;
        }
    }
    let orders = l1_orders(&mb, a, best);
    let coefficients = orders.iter().enumerate().map(|(k, &c)| (k as u32, c.max(0.0))).collect();
    Ok(BoundPolynomial {
        coefficients,
        provenance: source.provenance(),
        t,
        d: source.dim(),
        mu,
        m2,
        e_linf_input,
        e_l1: best,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Susceptibility profiles

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GaussianExact,
    McEstimate,
    SkeletonBound,
    /// `χ_t ≤ χ̄` from monotonicity in `t` and a supplied upper value.
    GriffithsCap,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::GaussianExact => "gaussian_exact",
            Provenance::McEstimate => "mc_estimate",
            Provenance::SkeletonBound => "skeleton_bound",
            Provenance::GriffithsCap => "griffiths_cap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian_exact" => Provenance::GaussianExact,
            "mc_estimate" => Provenance::McEstimate,
            "skeleton_bound" => Provenance::SkeletonBound,
            "griffiths_cap" => Provenance::GriffithsCap,
            other => return Err(Error::Parse(format!("unknown provenance `{other}`"))),
        })
    }
}

/// Continuation of a profile beyond its last grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailRule {
    /// Exactly Gaussian with mass `m²` beyond the grid.
    Gaussian { m2: f64 },
    /// `χ_t ≤ χ̄` for every `t` beyond the grid.
    Cap { chi_bar: f64 },
    /// No continuation: the integral beyond the grid is not certified.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SusceptibilityProfile {
    pub t_grid: Vec<f64>,
    pub chi: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub stderr: Vec<f64>,
    pub tail: TailRule,
    /// Reference Gaussian mass of the `χ = 1/(m² + 1/t) + r` split.
    pub m2_ref: f64,
}

impl SusceptibilityProfile {
    pub fn validate(&self) -> Result<()> {
        let n = self.t_grid.len();
        if n == 0 {
            return Err(Error::Config("empty scale grid".into()));
        }
        check_len(n, self.chi.len())?;
        check_len(n, self.provenance.len())?;
        check_len(n, self.stderr.len())?;
        if self.t_grid.windows(2).any(|w| !(w[1] > w[0])) || self.t_grid[0] <= 0.0 {
            return Err(Error::Config("scale grid must be positive and increasing".into()));
        }
        if self.chi.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Domain("susceptibility values must be positive and finite".into()));
        }
        if !(self.m2_ref > 0.0) {
            return Err(Error::Config("reference mass must be positive".into()));
        }
        Ok(())
    }

    pub fn gaussian(m2: f64, t_grid: &[f64]) -> Result<Self> {
        let p = SusceptibilityProfile {
            t_grid: t_grid.to_vec(),
            chi: t_grid.iter().map(|&t| 1.0 / (m2 + 1.0 / t)).collect(),
            provenance: vec![Provenance::GaussianExact; t_grid.len()],
            stderr: vec![0.0; t_grid.len()],
            tail: TailRule::Gaussian { m2 },
            m2_ref: m2,
        };
        p.validate()?;
        Ok(p)
    }

    /// `t,chi,provenance,stderr` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        use crate::lattice::fmt_f64;
        writeln!(out, "t,chi,provenance,stderr")?;
        for i in 0..self.t_grid.len() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.t_grid[i]),
                fmt_f64(self.chi[i]),
                self.provenance[i].as_str(),
                fmt_f64(self.stderr[i])
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(input: R, tail: TailRule, m2_ref: f64) -> Result<Self> {
        let mut lines = input.lines();
        let head = lines.next().ok_or_else(|| Error::Parse("empty profile".into()))??;
        if head.trim() != "t,chi,provenance,stderr" {
            return Err(Error::Parse(format!("unexpected profile header `{}`", head.trim())));
        }
        let mut p = SusceptibilityProfile {
            t_grid: vec![],
            chi: vec![],
            provenance: vec![],
            stderr: vec![],
            tail,
            m2_ref,
        };
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::Parse(format!("profile row {}: expected 4 columns", i + 2)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("profile row {}: bad number `{s}`", i + 2)));
            p.t_grid.push(num(cols[0])?);
            p.chi.push(num(cols[1])?);
            p.provenance.push(Provenance::parse(cols[2])?);
            p.stderr.push(num(cols[3])?);
        }
        p.validate()?;
        Ok(p)
    }
}

impl SusceptibilityProfile {
    /// Points of `self` up to its last grid value, followed by the points of
    /// `later` beyond it; tail and reference mass from `later`.
    pub fn splice(&self, later: &SusceptibilityProfile) -> Result<Self> {
        let cut = *self.t_grid.last().ok_or_else(|| Error::Config("empty scale grid".into()))?;
        let mut out = self.clone();
        for i in 0..later.t_grid.len() {
            if later.t_grid[i] > cut {
                out.t_grid.push(later.t_grid[i]);
                out.chi.push(later.chi[i]);
                out.provenance.push(later.provenance[i]);
                out.stderr.push(later.stderr[i]);
            }
        }
        out.tail = later.tail;
        out.validate()?;
        Ok(out)
    }
}

/// Skeleton-bound profile `χ_t ≤ ‖C_t‖_{L¹} + p_t(λ)`. Inside `(0, t₀]` the
/// `‖E‖` input is the smaller of `2c₀λ` and the all-scale barrier; beyond
/// `t₀` only the barrier applies, and without one those grid points are
/// dropped and the tail is `None`.
pub fn skeleton_profile(
    lambda: f64,
    mu: f64,
    m2: f64,
    source: &MomentSource,
    t_grid: &[f64],
    c0: Option<f64>,
) -> Result<(SusceptibilityProfile, WindowCertificate)> {
    if t_grid.is_empty() {
        return Err(Error::Config("empty scale grid".into()));
    }
    let mut cert = small_scale_window(lambda, mu, m2, source, t_grid, c0)?;
    cert.all_scales = match all_scale_barrier(lambda, mu, m2, source, t_grid) {
        Ok(b) => Some(b),
        Err(Error::WindowEmpty(_)) => None,
        Err(e) => return Err(e),
    };
    let barrier = cert.all_scales.as_ref().map(|b| b.barrier);
    let e_input = |t: f64| -> Option<f64> {
        match (t <= cert.t0, barrier) {
            (true, Some(b)) => Some(b.min(cert.e_bound)),
            (true, None) => Some(cert.e_bound),
            (false, b) => b,
        }
    };
    let mut ts = Vec::new();
    let mut chi = Vec::new();
    for &t in t_grid {
        let Some(e) = e_input(t) else { break };
        let m = source.moments(m2, t)?;
        let p = susceptibility_bound_polynomial(t, lambda, mu, m2, e, source)?;
        ts.push(t);
        chi.push(m.c1 + p.eval(lambda));
    }
    let tail = match e_input(f64::INFINITY) {
        Some(e) => {
            let m = source.moments(m2, f64::INFINITY)?;
            let p = susceptibility_bound_polynomial(f64::INFINITY, lambda, mu, m2, e, source)?;
            TailRule::Cap { chi_bar: m.c1 + p.eval(lambda) }
        }
        None => TailRule::None,
    };
    let n = ts.len();
    let prof = SusceptibilityProfile {
        t_grid: ts,
        chi,
        provenance: vec![Provenance::SkeletonBound; n],
        stderr: vec![0.0; n],
        tail,
        m2_ref: m2,
    };
    prof.validate()?;
    Ok((prof, cert))
}

/// The three profile sources.
#[derive(Debug, Clone)]
pub enum ProfileSource {
    Gaussian { m2: f64 },
    Mc { params: Phi4Params, config: crate::sampler::ChainConfig },
    Skeleton { lambda: f64, mu: f64, m2: f64, source: MomentSource },
}

/// Assembles a profile from one source on `t_grid`. Monte Carlo points are
/// estimated at each `t` (and at `t = ∞` for the cap when `mc_cap` is set).
pub fn chi_profile(source: &ProfileSource, t_grid: &[f64], mc_cap: bool) -> Result<SusceptibilityProfile> {
    if t_grid.is_empty() {
        return Err(Error::Config("empty scale grid".into()));
    }
    match source {
        ProfileSource::Gaussian { m2 } => SusceptibilityProfile::gaussian(*m2, t_grid),
        ProfileSource::Skeleton { lambda, mu, m2, source } => Ok(skeleton_profile(*lambda, *mu, *m2, source, t_grid, None)?.0),
        ProfileSource::Mc { params, config } => {
            let mut chi = Vec::new();
            let mut err = Vec::new();
            for (i, &t) in t_grid.iter().enumerate() {
                let p = params.at_scale(t)?;
                let cfg = crate::sampler::ChainConfig { seed: config.seed.wrapping_add(i as u64), ..*config };
                let est = crate::sampler::estimate_two_point(&crate::sampler::run_chain(&p, &cfg)?)?;
                chi.push(est.chi_hat);
                err.push(est.chi_stderr);
            }
            let tail = if mc_cap {
                let p = params.at_scale(f64::INFINITY)?;
                let cfg = crate::sampler::ChainConfig { seed: config.seed.wrapping_add(t_grid.len() as u64), ..*config };
                let est = crate::sampler::estimate_two_point(&crate::sampler::run_chain(&p, &cfg)?)?;
                TailRule::Cap { chi_bar: est.chi_hat + 3.0 * est.chi_stderr }
            } else {
                TailRule::None
            };
            let n = t_grid.len();
            let prof = SusceptibilityProfile {
                t_grid: t_grid.to_vec(),
                chi,
                provenance: vec![Provenance::McEstimate; n],
                stderr: err,
                tail,
                m2_ref: params.m2,
            };
            prof.validate()?;
            Ok(prof)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    #[test]
    fn one_site_diagrams() {
        let spec = build_lattice(2, 1.0, 1.0).unwrap();
        let k = covariance(&spec, MassSchedule::infinite(1.0).unwrap());
        let dn = diagram_norms(&k).unwrap();
        assert_eq!(dn.psi_l1, 0.0);
        assert_eq!(dn.c_psi_l1, 0.0);
        assert_eq!(dn.c_psi_l2, 0.0);
        assert!((dn.bubble5 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psi_has_zero_mass() {
        for (d, eps, side) in [(2, 0.25, 2.0), (3, 0.5, 2.0)] {
            let spec = build_lattice(d, eps, side).unwrap();
            let k = covariance(&spec, MassSchedule::new(1.0, 0.3).unwrap());
            assert!(diagram_norms(&k).unwrap().psi_mass.abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_recursion_is_zero() {
        let spec = build_lattice(2, 0.5, 2.0).unwrap();
        let src = MomentSource::Lattice(spec);
        let mb = e_bound_l1linf(1.0, 0.0, 1.0, 1.0, &src).unwrap();
        assert_eq!(mb.eval(0.0), 0.0);
        assert_eq!(mb.eval(0.7), 0.0);
        let p = susceptibility_bound_polynomial(1.0, 0.0, 1.0, 1.0, 0.0, &src).unwrap();
        assert_eq!(p.eval(0.0), 0.0);
        let cert = small_scale_window(0.0, 1.0, 1.0, &src, &[1e-3, 1.0, 1e3], None).unwrap();
        assert!(cert.t0.is_infinite());
    }

    #[test]
    fn q_bound_matches_hand_expansion() {
        let m = MomentSet {
            t: 1.0,
            m2_t: 2.0,
            c1: 0.5,
            c2: 0.3,
            cc2c: 0.07,
            ccc: 0.11,
            b5: 0.02,
            cpsi1: 0.0,
            cpsi2: 0.0,
            eta: 0.0,
            gamma: 0.0,
        };
        let (a, b) = (0.2_f64, 0.4_f64);
        let hand = 0.02
            + a * (0.09 + 0.28)
            + a * a * (6.0 * 0.15 + 0.44)
            + 2.0 * a * a * b * 0.3
            + 8.0 * a.powi(3) * 0.25
            + 5.0 * a.powi(3) * b * 0.5
            + a.powi(3) * b * b;
        assert!((q_bound(&m, a, b) - hand).abs() < 1e-15);
    }

    #[test]
    fn oracle_two_point_satisfies_skeleton_bounds() {
        use crate::oracle::{moments_dual_rule, GeneralModel};
        let spec = build_lattice(2, 1.0, 2.0).unwrap();
        for lambda in [0.1, 0.5, 1.0] {
            let params = Phi4Params::new(spec.clone(), lambda, 1.0, 1.0, Normalisation::Continuum).unwrap();
            let model: GeneralModel = params.general_model().unwrap();
            let m = moments_dual_rule(&model, 32).unwrap();
            let s = Field((0..4).map(|r| m.second[(0, r)]).collect());
            let k = covariance(&spec, MassSchedule::infinite(1.0).unwrap());
            let (u, l) = bfs_sides(&s, &k, lambda, 1.0, 1.0).unwrap();
            for x in 0..4 {
                let e = s[x] - k.values[x];
                assert!(l[x] <= e + 1e-9 && e <= u[x] + 1e-9, "λ={lambda} x={x}: {} ≤ {e} ≤ {}", l[x], u[x]);
            }
        }
    }
}
