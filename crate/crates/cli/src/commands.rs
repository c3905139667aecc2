//! Subcommand pipelines. Each builds its files in an `Emitter`; nothing is
//! written unless the whole pipeline succeeds.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use phi4_lsi::criterion::{lsi_lower_bound, spectral_gap_upper, LsiBoundReport, SpectralGapCheck};
use phi4_lsi::free_field::{
    counterterm, covariance, covariance_moments, fit_counterterm_scaling, CountertermReport, CovarianceMoments,
    MassSchedule, ScalingFit,
};
use phi4_lsi::oracle::{
    fd_hessian, hessian_identity, moments_dual_rule, truncated_two_point, verify_hessian_criterion, GeneralModel,
    HessianReport,
};
use phi4_lsi::sampler::{
    chain_rng, estimate_two_point, run_chain, run_chain_local, ChainConfig, ChainDiagnostics, CorrelationEstimate,
    LocalModel, Normalisation, Phi4Params,
};
use phi4_lsi::skeleton::{
    chi_profile, diagram_norms, skeleton_profile, verify_bfs, BfsReport, DiagramNorms,
    MomentSource, ProfileSource as CoreSource, ScaleGrid, ShapeConstants, SusceptibilityProfile, TailRule,
    WindowCertificate,
};
use phi4_lsi::{build_lattice, Error, LatticeSpec, Result};

use crate::config::{MomentKind, RunConfig, SourceKind, TailKind};
use crate::output::{sha256_hex, Emitter};

/// Outcome of a pipeline: its files and whether an inequality was violated.
pub struct Outcome {
    pub files: Emitter,
    pub violation: bool,
}

fn ok(files: Emitter) -> Result<Outcome> {
    Ok(Outcome { files, violation: false })
}

fn spec_of(cfg: &RunConfig) -> Result<LatticeSpec> {
    build_lattice(cfg.lattice.d, cfg.lattice.eps, cfg.lattice.side)
}

fn params_of(cfg: &RunConfig) -> Result<Phi4Params> {
    let m = &cfg.model;
    Phi4Params::new(spec_of(cfg)?, m.lambda, m.mu, m.m2, m.normalisation)?.at_scale(m.t)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CovarianceReport {
    t: f64,
    m2_t: f64,
    at_origin: f64,
    moments: CovarianceMoments,
    diagram_norms: DiagramNorms,
}

pub fn covariance_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let spec = spec_of(cfg)?;
    let sched = MassSchedule::new(cfg.model.m2, cfg.model.t)?;
    let kernel = covariance(&spec, sched);
    let mut out = Emitter::default();
    if cfg.output.csv() {
        out.add_with("covariance.csv", |w| spec.write_field_csv(&kernel.values, w))?;
    }
    if cfg.output.json() {
        let report = CovarianceReport {
            t: sched.t(),
            m2_t: sched.m2_t(),
            at_origin: kernel.at_origin(),
            moments: covariance_moments(&kernel),
            diagram_norms: diagram_norms(&kernel)?,
        };
        out.add_json("moments.json", &report)?;
    }
    ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ScalingReport {
    lambda: f64,
    basis: &'static str,
    fit: ScalingFit,
}

pub fn counterterms_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let d = cfg.lattice.d;
    let ct = &cfg.counterterms;
    if ct.eps.is_empty() || ct.lambdas.is_empty() {
        return Err(Error::Config("counterterms.eps and counterterms.lambdas must be non-empty".into()));
    }
    let mut rows: Vec<(f64, f64, CountertermReport)> = Vec::new();
    let mut fits = Vec::new();
    for &lambda in &ct.lambdas {
        let mut a = Vec::new();
        for &eps in &ct.eps {
            let spec = build_lattice(d, eps, cfg.lattice.side)?;
            let r = counterterm(&spec, lambda, cfg.model.m2)?;
            a.push(r.a_eps);
            rows.push((eps, lambda, r));
        }
        let basis = if d == 2 { "1, lambda*log(eps^-2)" } else { "1, lambda/eps, lambda^2*log(eps^-2)" };
        fits.push(ScalingReport { lambda, basis, fit: fit_counterterm_scaling(d, lambda, &ct.eps, &a)? });
    }
    let mut out = Emitter::default();
    if cfg.output.csv() {
        out.add_with("counterterms.csv", |w| {
            use std::io::Write;
            writeln!(w, "eps,lambda,a_eps,tadpole,sunset")?;
            for (eps, lambda, r) in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    phi4_lsi::lattice::fmt_f64(*eps),
                    phi4_lsi::lattice::fmt_f64(*lambda),
                    phi4_lsi::lattice::fmt_f64(r.a_eps),
                    phi4_lsi::lattice::fmt_f64(r.tadpole),
                    phi4_lsi::lattice::fmt_f64(r.sunset)
                )?;
            }
            Ok(())
        })?;
    }
    if cfg.output.json() {
        out.add_json("scaling.json", &fits)?;
    }
    ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SampleReport<'a> {
    estimate: &'a CorrelationEstimate,
    diagnostics: &'a [ChainDiagnostics],
    spectral_gap: SpectralGapCheck,
}

pub fn sample_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let params = params_of(cfg)?;
    let chain = cfg.sampler.chain_config();
    let stream = run_chain(&params, &chain)?;
    let est = estimate_two_point(&stream)?;
    let gap = spectral_gap_upper(est.chi_hat, est.chi_stderr, Some(&stream))?;
    let mut out = Emitter::default();
    // Slack is reported here; only `verify` turns violations into an exit code.
    let bfs = if params.normalisation == Normalisation::Continuum {
        let kernel = covariance(&params.spec, MassSchedule::new(params.m2, params.t)?);
        Some(verify_bfs(&est, &kernel, &params)?)
    } else {
        None
    };
    if cfg.output.csv() {
        out.add_with("chains.csv", |w| stream.write_csv(w))?;
        out.add_with("correlation.csv", |w| est.write_correlation_csv(w))?;
        out.add_with("chi.csv", |w| est.write_chi_csv(w))?;
        if let Some(r) = &bfs {
            out.add_with("bfs_slack.csv", |w| r.write_csv(w))?;
        }
    }
    if cfg.output.json() {
        out.add_json("sample_report.json", &SampleReport { estimate: &est, diagnostics: &stream.diagnostics, spectral_gap: gap })?;
    }
    ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BoundsReport {
    window: Option<WindowCertificate>,
    c0_override: Option<f64>,
    moments: MomentKind,
    shape_constants: Option<ShapeConstants>,
    chi_inf_estimate: Option<(f64, f64)>,
}

struct BuiltProfile {
    profile: SusceptibilityProfile,
    bounds: BoundsReport,
    /// `(χ̂_∞, stderr)` when an estimate of the full-measure susceptibility exists.
    chi_inf: Option<(f64, f64)>,
}

fn moment_source(cfg: &RunConfig, spec: &LatticeSpec, grid: &[f64]) -> Result<(MomentSource, Option<ShapeConstants>)> {
    match cfg.constants.moments {
        MomentKind::Lattice => Ok((MomentSource::Lattice(spec.clone()), None)),
        MomentKind::Shapes => {
            // A decade-spaced subgrid keeps the refinement sweep affordable.
            let coarse: Vec<f64> = grid.iter().step_by(cfg.grid.per_decade.max(1)).copied().collect();
            let c = ShapeConstants::fit(cfg.lattice.d, cfg.model.m2, cfg.lattice.side, &cfg.constants.shape_eps, &coarse)?;
            Ok((MomentSource::Shapes(c), Some(c)))
        }
    }
}

fn mc_grid(cfg: &RunConfig, start: f64) -> Vec<f64> {
    let k = cfg.grid.mc_per_decade;
    (0..=k * cfg.grid.mc_decades).map(|i| start * 10f64.powf(i as f64 / k as f64)).collect()
}

fn mc_chi_inf(params: &Phi4Params, chain: &ChainConfig) -> Result<(f64, f64)> {
    // Distinct stream family from the profile points.
    let cfg = ChainConfig { seed: chain.seed ^ 0x9e37_79b9_7f4a_7c15, ..*chain };
    let est = estimate_two_point(&run_chain(&params.at_scale(f64::INFINITY)?, &cfg)?)?;
    Ok((est.chi_hat, est.chi_stderr))
}

fn build_profile(cfg: &RunConfig) -> Result<BuiltProfile> {
    let spec = spec_of(cfg)?;
    let m = &cfg.model;
    let grid = ScaleGrid { t_min: cfg.grid.t_min, t_max: cfg.grid.t_max, per_decade: cfg.grid.per_decade }.points()?;
    let params = Phi4Params::new(spec.clone(), m.lambda, m.mu, m.m2, m.normalisation)?;
    let chain = cfg.sampler.chain_config();
    let mut bounds = BoundsReport {
        window: None,
        c0_override: cfg.constants.c0,
        moments: cfg.constants.moments,
        shape_constants: None,
        chi_inf_estimate: None,
    };
    let mut chi_inf = None;
    let mut profile = match cfg.profile.source {
        SourceKind::Gaussian => {
            chi_inf = Some((1.0 / m.m2, 0.0));
            SusceptibilityProfile::gaussian(m.m2, &grid)?
        }
        SourceKind::Skeleton | SourceKind::SkeletonMc => {
            let (src, shapes) = moment_source(cfg, &spec, &grid)?;
            bounds.shape_constants = shapes;
            let (sk, cert) = skeleton_profile(m.lambda, m.mu, m.m2, &src, &grid, cfg.constants.c0)?;
            let t0 = cert.t0;
            bounds.window = Some(cert);
            // A cap tail means the skeleton bound already covers every scale.
            if cfg.profile.source == SourceKind::Skeleton || matches!(sk.tail, TailRule::Cap { .. }) {
                sk
            } else {
                let last = sk.t_grid.last().copied().unwrap_or(t0);
                let ts = mc_grid(cfg, last * 10f64.powf(1.0 / cfg.grid.mc_per_decade as f64));
                let mc = chi_profile(&CoreSource::Mc { params: params.clone(), config: chain }, &ts, false)?;
                let (c, s) = mc_chi_inf(&params, &chain)?;
                chi_inf = Some((c, s));
                let mut mc = mc;
                mc.tail = TailRule::Cap { chi_bar: c + 3.0 * s };
                sk.splice(&mc)?
            }
        }
        SourceKind::Mc => {
            let ts = mc_grid(cfg, cfg.grid.mc_t_min);
            let mut mc = chi_profile(&CoreSource::Mc { params: params.clone(), config: chain }, &ts, false)?;
            let (c, s) = mc_chi_inf(&params, &chain)?;
            chi_inf = Some((c, s));
            mc.tail = TailRule::Cap { chi_bar: c + 3.0 * s };
            mc
        }
        SourceKind::File => {
            let path = cfg.profile.path.as_ref().expect("validated");
            let file = std::fs::File::open(path)?;
            SusceptibilityProfile::read_csv(std::io::BufReader::new(file), TailRule::None, m.m2)?
        }
    };
    profile.tail = match cfg.profile.tail {
        TailKind::Auto => profile.tail,
        TailKind::None => TailRule::None,
        TailKind::Gaussian => TailRule::Gaussian { m2: cfg.profile.tail_m2.unwrap_or(m.m2) },
        TailKind::Cap => match (cfg.profile.chi_bar, profile.tail) {
            (Some(chi_bar), _) => TailRule::Cap { chi_bar },
            (None, TailRule::Cap { chi_bar }) => TailRule::Cap { chi_bar },
            _ => return Err(Error::Config("profile.tail = \"cap\" needs profile.chi_bar".into())),
        },
    };
    bounds.chi_inf_estimate = chi_inf;
    Ok(BuiltProfile { profile, bounds, chi_inf })
}

pub fn chi_profile_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let built = build_profile(cfg)?;
    let mut out = Emitter::default();
    if cfg.output.csv() {
        out.add_with("chi_profile.csv", |w| built.profile.write_csv(w))?;
    }
    if cfg.output.json() {
        out.add_json("bounds.json", &built.bounds)?;
    }
    ok(out)
}

#[derive(Serialize)]
struct LsiReportFile<'a> {
    #[serde(flatten)]
    report: &'a LsiBoundReport,
    profile_sha256: String,
    window: Option<&'a WindowCertificate>,
}

pub fn lsi_bound_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let built = build_profile(cfg)?;
    let mut report = lsi_lower_bound(&built.profile)?;
    if let Some((c, s)) = built.chi_inf {
        report = report.with_upper(c, s);
    }
    let mut csv = Vec::new();
    built.profile.write_csv(&mut csv)?;
    let digest = sha256_hex(&csv);
    let mut out = Emitter::default();
    if cfg.output.csv() {
        out.add("chi_profile.csv", csv);
    }
    out.add_json(
        "lsi_report.json",
        &LsiReportFile { report: &report, profile_sha256: digest, window: built.bounds.window.as_ref() },
    )?;
    ok(out)
}

// ---------------------------------------------------------------------------
// Falsification suite

#[derive(Debug, Serialize)]
struct SamplerCheck {
    sites: usize,
    lambda: f64,
    /// Largest `|MC − oracle| / stderr` over `⟨φ²⟩`, `S(x)` and `χ`.
    max_z: f64,
    ess: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct MonotonicityCheck {
    sites: usize,
    fields: usize,
    /// Smallest entry of `Σ^h` and of `Σ^0 − Σ^h`.
    min_positivity: f64,
    min_decrease: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct HessianCheck {
    t: f64,
    max_identity_error: f64,
    criterion: HessianReport,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct ExactBfsCheck {
    lambda: f64,
    report: BfsReport,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    sampler: Vec<SamplerCheck>,
    monotonicity: Vec<MonotonicityCheck>,
    hessian: Vec<HessianCheck>,
    skeleton_exact: Vec<ExactBfsCheck>,
    passed: bool,
}

fn sampler_vs_oracle(cfg: &RunConfig, n: usize, lambda: f64) -> Result<SamplerCheck> {
    let model = GeneralModel::ring(n, cfg.model.m2, lambda, 0.0)?;
    let exact = moments_dual_rule(&model, cfg.verify.nodes)?;
    let local = LocalModel::ring(&model, 1.0);
    let chain = ChainConfig { n_keep: cfg.verify.n_keep, ..cfg.sampler.chain_config() };
    let stream = run_chain_local(&local, &chain)?;
    let est = estimate_two_point(&stream)?;
    let mut max_z: f64 = 0.0;
    let z = |a: f64, b: f64, s: f64| if s > 0.0 { (a - b).abs() / s } else if a == b { 0.0 } else { f64::INFINITY };
    for r in 0..n {
        max_z = max_z.max(z(est.s_hat[r], exact.second[(0, r)], est.stderr[r]));
    }
    let chi_exact: f64 = (0..n).map(|r| exact.second[(0, r)]).sum();
    max_z = max_z.max(z(est.chi_hat, chi_exact, est.chi_stderr));
    Ok(SamplerCheck { sites: n, lambda, max_z, ess: est.ess, passed: max_z <= 3.0 && est.ess >= 1e4 })
}

fn monotonicity(cfg: &RunConfig, n: usize, rng: &mut impl Rng) -> Result<MonotonicityCheck> {
    let model = GeneralModel::ring(n, cfg.model.m2, 1.0, -0.5)?;
    let s0 = truncated_two_point(&model)?;
    let mut min_pos = f64::INFINITY;
    let mut min_dec = f64::INFINITY;
    for _ in 0..cfg.verify.random_fields {
        let h = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let sh = truncated_two_point(&model.with_h(h)?)?;
        min_pos = min_pos.min(sh.min());
        min_dec = min_dec.min((&s0 - &sh).min());
    }
    Ok(MonotonicityCheck {
        sites: n,
        fields: cfg.verify.random_fields,
        min_positivity: min_pos,
        min_decrease: min_dec,
        passed: min_pos >= -1e-6 && min_dec >= -1e-6,
    })
}

fn hessian(cfg: &RunConfig, t: f64, rng: &mut impl Rng) -> Result<HessianCheck> {
    let model = GeneralModel::ring(2, cfg.model.m2, 1.0, 0.0)?;
    let phis: Vec<Vec<f64>> =
        (0..cfg.verify.hessian_fields).map(|_| (0..2).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let xs: Vec<Vec<f64>> = (0..cfg.verify.hessian_fields).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut max_err: f64 = 0.0;
    for phi in &phis {
        let exact = hessian_identity(&model, t, phi)?;
        let (fd, _) = fd_hessian(&model, t, phi, 1e-2 * t.sqrt().min(1.0))?;
        max_err = max_err.max((&exact - &fd).amax());
    }
    let criterion = verify_hessian_criterion(&model, t, &phis, &xs, 1e-9)?;
    let passed = max_err <= cfg.verify.hessian_tol && criterion.passed;
    Ok(HessianCheck { t, max_identity_error: max_err, criterion, passed })
}

fn exact_bfs(cfg: &RunConfig, lambda: f64) -> Result<ExactBfsCheck> {
    let spec = build_lattice(2, 1.0, 2.0)?;
    let params = Phi4Params::new(spec.clone(), lambda, cfg.model.m2, cfg.model.m2, Normalisation::Continuum)?;
    let exact = moments_dual_rule(&params.general_model()?, cfg.verify.nodes)?;
    let n = spec.sites();
    let s: Vec<f64> = (0..n).map(|r| exact.second[(0, r)]).collect();
    let est = CorrelationEstimate {
        s_hat: s,
        stderr: vec![0.0; n],
        chi_hat: 0.0,
        chi_stderr: 0.0,
        ess: f64::INFINITY,
        n_samples: 0,
        chi_weight: spec.volume_weight(),
        coords: (0..n).map(|i| spec.coords(i)).collect(),
        batches: vec![],
        warnings: vec![],
    };
    let kernel = covariance(&spec, MassSchedule::infinite(cfg.model.m2)?);
    let report = verify_bfs(&est, &kernel, &params)?;
    // Quadrature-level tolerance on exact data.
    let passed = report.lower_slack.iter().chain(&report.upper_slack).all(|s| *s >= -1e-9);
    Ok(ExactBfsCheck { lambda, report, passed })
}

pub fn verify_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let mut rng = chain_rng(cfg.sampler.seed, 0);
    let mut sampler = Vec::new();
    for n in [1, 2] {
        for lambda in [0.0, 0.5, 1.0] {
            sampler.push(sampler_vs_oracle(cfg, n, lambda)?);
        }
    }
    let monotonicity = vec![monotonicity(cfg, 2, &mut rng)?, monotonicity(cfg, 3, &mut rng)?];
    let mut hess = Vec::new();
    for &t in &cfg.verify.hessian_t {
        hess.push(hessian(cfg, t, &mut rng)?);
    }
    let skeleton_exact = vec![exact_bfs(cfg, 0.1)?, exact_bfs(cfg, 0.5)?];
    let passed = sampler.iter().all(|c| c.passed)
        && monotonicity.iter().all(|c| c.passed)
        && hess.iter().all(|c| c.passed)
        && skeleton_exact.iter().all(|c| c.passed);
    let report = OracleReport { sampler, monotonicity, hessian: hess, skeleton_exact, passed };
    let mut out = Emitter::default();
    out.add_json("oracle_report.json", &report)?;
    Ok(Outcome { files: out, violation: !passed })
}
