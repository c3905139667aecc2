//! Markov chain Monte Carlo for lattice φ⁴ measures and translation-averaged
//! two-point estimators.
//!
//! Every measure is reduced to the local form
//! `S(φ) = ½Σ_x D_x φ_x² + ½Σ_{x≠y} J_{xy} φ_xφ_y + ¼gΣφ_x⁴ − Σ h_xφ_x`
//! with `J ≤ 0`, which is also what the oracle integrates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_field::counterterm;
use crate::lattice::{Field, LatticeSpec};
use crate::numerics::{batch_means, pool, BatchStats};
use crate::oracle::GeneralModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalisation {
    /// `ε^d Σ_x [½φ(−Δ^εφ) + ¼λφ⁴ + ½(μ + 1/t + a^ε)φ²]`.
    Continuum,
    /// `½(φ,−Δφ) + Σ_x [¼λφ⁴ + ½(μ + 1/t)φ²]` on the graph, no ε-weights
    /// and no counterterm; `λ, μ` play the roles of `g, ν`.
    LatticeSection3,
}

#[derive(Debug, Clone)]
pub struct Phi4Params {
    pub spec: LatticeSpec,
    pub lambda: f64,
    pub mu: f64,
    pub m2: f64,
    /// Scale `t ∈ (0, ∞]`; adds mass `1/t`.
    pub t: f64,
    pub normalisation: Normalisation,
    /// External field, paired with `φ` by the plain sum `Σ h_xφ_x`.
    pub h: Option<Field>,
}

impl Phi4Params {
    pub fn new(spec: LatticeSpec, lambda: f64, mu: f64, m2: f64, normalisation: Normalisation) -> Result<Self> {
        let p = Phi4Params { spec, lambda, mu, m2, t: f64::INFINITY, normalisation, h: None };
        p.validate()?;
        Ok(p)
    }

    pub fn at_scale(&self, t: f64) -> Result<Self> {
        let p = Phi4Params { t, ..self.clone() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.m2.is_finite() && self.m2 > 0.0) {
            return Err(Error::Config(format!("m2 must be positive, got {}", self.m2)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config("mu must be finite".into()));
        }
        if self.t.is_nan() || self.t <= 0.0 {
            return Err(Error::Config(format!("scale t must be positive, got {}", self.t)));
        }
        if let Some(h) = &self.h {
            crate::error::check_len(self.spec.sites(), h.len())?;
        }
        Ok(())
    }

    pub fn a_eps(&self) -> Result<f64> {
        match self.normalisation {
            Normalisation::Continuum => Ok(counterterm(&self.spec, self.lambda, self.m2)?.a_eps),
            Normalisation::LatticeSection3 => Ok(0.0),
        }
    }

    /// Weight of the susceptibility sum: `ε^d` or `1`.
    pub fn chi_weight(&self) -> f64 {
        match self.normalisation {
            Normalisation::Continuum => self.spec.volume_weight(),
            Normalisation::LatticeSection3 => 1.0,
        }
    }

    /// `(A, g, ν)` of the general model: continuum `A = ε^d(−Δ^ε + m²)`,
    /// `g = ε^dλ`, `ν = ε^d(μ − m² + a^ε + 1/t)`; graph mode `A = −Δ + m²`,
    /// `g = λ`, `ν = μ + 1/t − m²`.
    pub fn general_model(&self) -> Result<GeneralModel> {
        let n = self.spec.sites();
        let inv_t = 1.0 / self.t;
        let (w, hop) = match self.normalisation {
            Normalisation::Continuum => {
                let w = self.spec.volume_weight();
                (w, w / (self.spec.eps() * self.spec.eps()))
            }
            Normalisation::LatticeSection3 => (1.0, 1.0),
        };
        let mut a = DMatrix::zeros(n, n);
        for x in 0..n {
            a[(x, x)] += w * self.m2;
            for y in self.spec.neighbours(x) {
                a[(x, x)] += hop;
                a[(x, y)] -= hop;
            }
        }
        let nu = w * (self.mu - self.m2 + self.a_eps()? + inv_t);
        let h = match &self.h {
            Some(f) => DVector::from_column_slice(f.values()),
            None => DVector::zeros(n),
        };
        GeneralModel::new(a, w * self.lambda, nu, h)
    }

    pub fn local_model(&self) -> Result<LocalModel> {
        let w = match self.normalisation {
            Normalisation::Continuum => self.spec.volume_weight(),
            Normalisation::LatticeSection3 => 1.0,
        };
        let mut lm = LocalModel::from_general(&self.general_model()?, self.spec.translation_table(), self.chi_weight());
        lm.mobility = 1.0 / w;
        lm.coords = (0..self.spec.sites()).map(|i| self.spec.coords(i)).collect();
        Ok(lm)
    }
}

/// Sparse local form of a Gibbs measure plus the symmetry data needed by the
/// estimators.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub diag: Vec<f64>,
    pub nbrs: Vec<Vec<(usize, f64)>>,
    pub g: f64,
    pub h: Vec<f64>,
    /// `shift[r][x] = x + r`.
    pub translations: Vec<Vec<usize>>,
    pub chi_weight: f64,
    /// Langevin drift prefactor (`ε^{-d}` in continuum normalisation).
    pub mobility: f64,
    /// Displacement labels for output, one coordinate vector per `r`.
    pub coords: Vec<Vec<usize>>,
}

impl LocalModel {
    pub fn from_general(model: &GeneralModel, translations: Vec<Vec<usize>>, chi_weight: f64) -> Self {
        let n = model.sites();
        let diag = (0..n).map(|x| model.a[(x, x)] + model.nu).collect();
        let nbrs = (0..n)
            .map(|x| {
                (0..n)
                    .filter(|&y| y != x && model.a[(x, y)] != 0.0)
                    .map(|y| (y, model.a[(x, y)]))
                    .collect()
            })
            .collect();
        LocalModel {
            diag,
            nbrs,
            g: model.g,
            h: model.h.iter().copied().collect(),
            translations,
            chi_weight,
            mobility: 1.0,
            coords: (0..n).map(|i| vec![i]).collect(),
        }
    }

    /// Ring of `n` sites with cyclic translations.
    pub fn ring(model: &GeneralModel, chi_weight: f64) -> Self {
        let n = model.sites();
        let tr = (0..n).map(|r| (0..n).map(|x| (x + r) % n).collect()).collect();
        Self::from_general(model, tr, chi_weight)
    }

    pub fn sites(&self) -> usize {
        self.diag.len()
    }

    pub fn action(&self, phi: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in 0..self.sites() {
            let p = phi[x];
            let mut off = 0.0;
            for &(y, j) in &self.nbrs[x] {
                off += j * phi[y];
            }
            s += 0.5 * self.diag[x] * p * p + 0.5 * p * off + 0.25 * self.g * p.powi(4) - self.h[x] * p;
        }
        s
    }

    /// Linear coefficient `b_x = Σ_y J_{xy}φ_y − h_x` of the site conditional.
    fn site_field(&self, phi: &[f64], x: usize) -> f64 {
        let mut b = -self.h[x];
        for &(y, j) in &self.nbrs[x] {
            b += j * phi[y];
        }
        b
    }

    /// Conditional energy `½D u² + b u + ¼g u⁴` of site `x`.
    pub fn site_energy(&self, phi: &[f64], x: usize, u: f64) -> f64 {
        let b = self.site_field(phi, x);
        0.5 * self.diag[x] * u * u + b * u + 0.25 * self.g * u.powi(4)
    }

    fn gradient(&self, phi: &[f64], out: &mut [f64]) {
        for x in 0..self.sites() {
            out[x] = self.diag[x] * phi[x] + self.site_field(phi, x) + self.g * phi[x].powi(3);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    LangevinEuler,
    MetropolisSite,
    HeatbathSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub scheme: Scheme,
    pub step_dt: f64,
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            scheme: Scheme::MetropolisSite,
            step_dt: 1e-3,
            n_burn: 1000,
            n_keep: 10_000,
            thin: 1,
            n_chains: 4,
            seed: 0x5eed,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_dt > 0.0 && self.step_dt.is_finite()) {
            return Err(Error::Config(format!("step_dt must be positive, got {}", self.step_dt)));
        }
        if self.n_keep == 0 || self.thin == 0 || self.n_chains == 0 {
            return Err(Error::Config("n_keep, thin and n_chains must be at least 1".into()));
        }
        Ok(())
    }
}

/// Samples kept after burn-in, per chain, in sweep order.
#[derive(Debug, Clone)]
pub struct SampleStream {
    pub sites: usize,
    /// `chains[c][k]` is the k-th kept configuration of chain `c`.
    pub chains: Vec<Vec<Vec<f64>>>,
    pub diagnostics: Vec<ChainDiagnostics>,
    pub translations: Vec<Vec<usize>>,
    pub chi_weight: f64,
    pub coords: Vec<Vec<usize>>,
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    pub burn_in_sweeps: usize,
    pub burn_in_converged: bool,
    pub acceptance: f64,
    pub proposal_width: f64,
}

impl SampleStream {
    /// `Σ_x φ_x` for every kept sample, per chain.
    pub fn total_field_series(&self) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.iter().map(|s| s.iter().sum()).collect()).collect()
    }

    /// `chain,sweep,site,value` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "chain,sweep,site,value")?;
        for (c, chain) in self.chains.iter().enumerate() {
            let burn = self.diagnostics[c].burn_in_sweeps;
            for (k, s) in chain.iter().enumerate() {
                for (x, v) in s.iter().enumerate() {
                    writeln!(out, "{c},{},{x},{}", burn + (k + 1) * self.thin, crate::lattice::fmt_f64(*v))?;
                }
            }
        }
        Ok(())
    }
}

/// Counter-based stream: chain `c` of master seed `s` owns ChaCha stream `c`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

struct Chain<'a> {
    model: &'a LocalModel,
    scheme: Scheme,
    dt: f64,
    width: f64,
    phi: Vec<f64>,
    rng: ChaCha8Rng,
    proposed: u64,
    accepted: u64,
    grad: Vec<f64>,
}

/// Proposal precision used by the rejection heat-bath: `a' = a/2 + √(a²/4 + 2g) > a`.
fn heatbath_envelope(a: f64, g: f64) -> f64 {
    0.5 * a + (0.25 * a * a + 2.0 * g).sqrt()
}

/// Exact draw from `∝ exp(−½a u² − b u − ¼g u⁴)` by rejection from a Gaussian.
pub fn heatbath_draw<R: Rng>(rng: &mut R, a: f64, b: f64, g: f64) -> f64 {
    if g == 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        return -b / a + z / a.sqrt();
    }
    let ap = heatbath_envelope(a, g);
    let k = (ap - a).powi(2) / (4.0 * g);
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let u = -b / ap + z / ap.sqrt();
        // log target − log envelope − K ≤ 0
        let log_acc = 0.5 * (ap - a) * u * u - 0.25 * g * u.powi(4) - k;
        let v: f64 = rng.random();
        if v.ln() <= log_acc {
            return u;
        }
    }
}

impl<'a> Chain<'a> {
    fn sweep(&mut self) -> Result<()> {
        let m = self.model;
        match self.scheme {
            Scheme::MetropolisSite => {
                for x in 0..m.sites() {
                    let u = self.phi[x];
                    let z: f64 = self.rng.sample(StandardNormal);
                    let un = u + self.width * z;
                    let de = m.site_energy(&self.phi, x, un) - m.site_energy(&self.phi, x, u);
                    let v: f64 = self.rng.random();
                    self.proposed += 1;
                    if de <= 0.0 || v < (-de).exp() {
                        self.phi[x] = un;
                        self.accepted += 1;
                    }
                }
            }
            Scheme::HeatbathSite => {
                for x in 0..m.sites() {
                    let b = m.site_field(&self.phi, x);
                    self.phi[x] = heatbath_draw(&mut self.rng, m.diag[x], b, m.g);
                    self.proposed += 1;
                    self.accepted += 1;
                }
            }
            Scheme::LangevinEuler => {
                m.gradient(&self.phi, &mut self.grad);
                let noise = (2.0 * self.dt * m.mobility).sqrt();
                for x in 0..m.sites() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    self.phi[x] += -self.dt * m.mobility * self.grad[x] + noise * z;
                }
                self.proposed += 1;
                self.accepted += 1;
                if self.phi.iter().any(|v| !v.is_finite() || v.abs() > 1e100) {
                    return Err(Error::StepSize(format!(
                        "Langevin trajectory left the finite range with step_dt = {}",
                        self.dt
                    )));
                }
            }
        }
        Ok(())
    }

    fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Burn-in: the first `n_burn` sweeps (with proposal tuning), then further
    /// windows until two consecutive window means of the action agree within
    /// one combined standard error.
    fn burn_in(&mut self, n_burn: usize) -> Result<(usize, bool)> {
        const TUNE_EVERY: usize = 50;
        let mut done = 0;
        while done < n_burn {
            let chunk = TUNE_EVERY.min(n_burn - done);
            self.proposed = 0;
            self.accepted = 0;
            for _ in 0..chunk {
                self.sweep()?;
            }
            done += chunk;
            if self.scheme == Scheme::MetropolisSite {
                let acc = self.acceptance();
                if acc < 0.3 {
                    self.width *= 0.8;
                } else if acc > 0.5 {
                    self.width *= 1.25;
                }
            }
        }
        self.proposed = 0;
        self.accepted = 0;
        let window = (n_burn / 4).max(20);
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..40 {
            let mut series = Vec::with_capacity(window);
            for _ in 0..window {
                self.sweep()?;
                series.push(self.model.action(&self.phi));
            }
            done += window;
            let st = batch_means(&series, 10);
            if let Some((m0, e0)) = prev {
                if (st.mean - m0).abs() <= (e0 * e0 + st.stderr * st.stderr).sqrt() {
                    return Ok((done, true));
                }
            }
            prev = Some((st.mean, st.stderr));
        }
        Ok((done, false))
    }
}

pub fn run_chain_local(model: &LocalModel, config: &ChainConfig) -> Result<SampleStream> {
    config.validate()?;
    let results: Vec<Result<(Vec<Vec<f64>>, ChainDiagnostics)>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = Chain {
                model,
                scheme: config.scheme,
                dt: config.step_dt,
                width: 1.0 / model.diag.iter().cloned().fold(f64::INFINITY, f64::min).abs().max(1e-6).sqrt(),
                phi: vec![0.0; model.sites()],
                rng: chain_rng(config.seed, c),
                proposed: 0,
                accepted: 0,
                grad: vec![0.0; model.sites()],
            };
            let (burn, converged) = chain.burn_in(config.n_burn)?;
            let mut kept = Vec::with_capacity(config.n_keep);
            for _ in 0..config.n_keep {
                for _ in 0..config.thin {
                    chain.sweep()?;
                }
                kept.push(chain.phi.clone());
            }
            let diag = ChainDiagnostics {
                burn_in_sweeps: burn,
                burn_in_converged: converged,
                acceptance: chain.acceptance(),
                proposal_width: chain.width,
            };
            Ok((kept, diag))
        })
        .collect();
    let mut chains = Vec::with_capacity(config.n_chains);
    let mut diagnostics = Vec::with_capacity(config.n_chains);
    for r in results {
        let (k, d) = r?;
        chains.push(k);
        diagnostics.push(d);
    }
    Ok(SampleStream {
        sites: model.sites(),
        chains,
        diagnostics,
        translations: model.translations.clone(),
        chi_weight: model.chi_weight,
        coords: model.coords.clone(),
        thin: config.thin,
    })
}

pub fn run_chain(params: &Phi4Params, config: &ChainConfig) -> Result<SampleStream> {
    params.validate()?;
    run_chain_local(&params.local_model()?, config)
}

/// Translation-averaged estimate of `S(r) = ⟨φ_0φ_r⟩`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub s_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub chi_hat: f64,
    pub chi_stderr: f64,
    pub ess: f64,
    pub n_samples: usize,
    pub chi_weight: f64,
    /// Displacement labels (lattice coordinates in units of ε, or ring index).
    pub coords: Vec<Vec<usize>>,
    /// Per-chain batch-mean estimates of each `S(r)`, kept for jackknife
    /// error propagation: `batches[b][r]`.
    pub batches: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Batches per chain used for error bars.
pub const BATCHES_PER_CHAIN: usize = 16;

pub fn estimate_two_point(stream: &SampleStream) -> Result<CorrelationEstimate> {
    let n = stream.sites;
    let tr = &stream.translations;
    let mut per_chain_r: Vec<Vec<BatchStats>> = Vec::new();
    let mut per_chain_chi: Vec<BatchStats> = Vec::new();
    let mut batches: Vec<Vec<f64>> = Vec::new();
    let mut total = 0;
    for chain in &stream.chains {
        let k = chain.len();
        total += k;
        let mut series = vec![vec![0.0; k]; n];
        let mut chi_series = vec![0.0; k];
        for (i, s) in chain.iter().enumerate() {
            let mut chi = 0.0;
            for r in 0..n {
                let row = &tr[r];
                let mut acc = 0.0;
                for x in 0..n {
                    acc += s[x] * s[row[x]];
                }
                let v = acc / n as f64;
                series[r][i] = v;
                chi += v;
            }
            chi_series[i] = stream.chi_weight * chi;
        }
        per_chain_r.push(series.iter().map(|s| batch_means(s, BATCHES_PER_CHAIN)).collect());
        per_chain_chi.push(batch_means(&chi_series, BATCHES_PER_CHAIN));
        let b = k / BATCHES_PER_CHAIN;
        if b > 0 {
            for bi in 0..BATCHES_PER_CHAIN {
                batches.push(
                    (0..n)
                        .map(|r| series[r][bi * b..(bi + 1) * b].iter().sum::<f64>() / b as f64)
                        .collect(),
                );
            }
        }
    }
    let mut s_hat = Vec::with_capacity(n);
    let mut stderr = Vec::with_capacity(n);
    for r in 0..n {
        let st: Vec<BatchStats> = per_chain_r.iter().map(|c| c[r]).collect();
        let p = pool(&st);
        s_hat.push(p.mean);
        stderr.push(p.stderr);
    }
    let chi_pool = pool(&per_chain_chi);
    let chi_hat = stream.chi_weight * s_hat.iter().sum::<f64>();
    let ess = chi_pool.ess;
    if !(ess > 0.0) {
        return Err(Error::SamplingQuality(format!("effective sample size {ess} is not positive")));
    }
    let mut warnings = Vec::new();
    if ess < 100.0 {
        warnings.push(format!("only {ess:.1} effective samples (fewer than 100)"));
    }
    for (c, d) in stream.diagnostics.iter().enumerate() {
        if !d.burn_in_converged {
            warnings.push(format!("chain {c}: burn-in did not stabilise"));
        }
    }
    Ok(CorrelationEstimate {
        s_hat,
        stderr,
        chi_hat,
        chi_stderr: chi_pool.stderr,
        ess,
        n_samples: total,
        chi_weight: stream.chi_weight,
        coords: stream.coords.clone(),
        batches,
        warnings,
    })
}

impl CorrelationEstimate {
    /// `r_1,...,r_d,s_hat,stderr` rows.
    pub fn write_correlation_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        let d = self.coords.first().map(Vec::len).unwrap_or(1);
        let head: Vec<String> = (1..=d).map(|a| format!("r_{a}")).collect();
        writeln!(out, "{},s_hat,stderr", head.join(","))?;
        for (r, c) in self.coords.iter().enumerate() {
            let cs: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{}",
                cs.join(","),
                crate::lattice::fmt_f64(self.s_hat[r]),
                crate::lattice::fmt_f64(self.stderr[r])
            )?;
        }
        Ok(())
    }

    /// `chi_hat,chi_stderr,ess`.
    pub fn write_chi_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "chi_hat,chi_stderr,ess")?;
        writeln!(
            out,
            "{},{},{}",
            crate::lattice::fmt_f64(self.chi_hat),
            crate::lattice::fmt_f64(self.chi_stderr),
            crate::lattice::fmt_f64(self.ess)
        )?;
        Ok(())
    }
}

/// Transition density of one Metropolis site update `φ_x: u → u'` (`u' ≠ u`).
pub fn metropolis_kernel_density(model: &LocalModel, phi: &[f64], x: usize, u_new: f64, width: f64) -> f64 {
    let u = phi[x];
    let q = (-(u_new - u).powi(2) / (2.0 * width * width)).exp() / (width * (2.0 * std::f64::consts::PI).sqrt());
    let de = model.site_energy(phi, x, u_new) - model.site_energy(phi, x, u);
    q * (-de).exp().min(1.0)
}

/// Unnormalised Gibbs weight `e^{−S(φ)}`.
pub fn gibbs_weight(model: &LocalModel, phi: &[f64]) -> f64 {
    (-model.action(phi)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    #[test]
    fn streams_are_reproducible() {
        let spec = build_lattice(2, 1.0, 2.0).unwrap();
        let p = Phi4Params::new(spec, 0.5, 1.0, 1.0, Normalisation::Continuum).unwrap();
        let cfg = ChainConfig { n_burn: 100, n_keep: 50, n_chains: 2, ..Default::default() };
        let a = run_chain(&p, &cfg).unwrap();
        let b = run_chain(&p, &cfg).unwrap();
        assert_eq!(a.chains, b.chains);
        let c = run_chain(&p, &ChainConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.chains, c.chains);
    }

    #[test]
    fn one_site_general_model() {
        let spec = build_lattice(2, 1.0, 1.0).unwrap();
        let p = Phi4Params::new(spec, 1.0, 1.0, 1.0, Normalisation::Continuum).unwrap();
        let g = p.general_model().unwrap();
        // a^ε = 3 on the single site, so ν = 1 − 1 + 3
        assert_eq!(g.a[(0, 0)], 1.0);
        assert_eq!(g.nu, 3.0);
        let lm = p.local_model().unwrap();
        assert_eq!(lm.diag, vec![4.0]);
    }

    #[test]
    fn heatbath_draw_mean_zero() {
        let mut rng = chain_rng(1, 0);
        let n = 20000;
        let s: f64 = (0..n).map(|_| heatbath_draw(&mut rng, -1.0, 0.0, 1.0)).sum::<f64>();
        assert!((s / n as f64).abs() < 0.05);
    }

    #[test]
    fn langevin_blows_up_with_huge_step() {
        let spec = build_lattice(2, 1.0, 2.0).unwrap();
        let p = Phi4Params::new(spec, 1.0, 1.0, 1.0, Normalisation::Continuum).unwrap();
        let cfg = ChainConfig { scheme: Scheme::LangevinEuler, step_dt: 5.0, n_burn: 200, n_keep: 10, ..Default::default() };
        assert!(matches!(run_chain(&p, &cfg), Err(Error::StepSize(_))));
    }
}
