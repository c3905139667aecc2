//! Run configuration: TOML with every section optional except `lattice.d`.

use serde::{Deserialize, Serialize};

use phi4_lsi::sampler::{ChainConfig, Normalisation, Scheme};
use phi4_lsi::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub counterterms: CountertermSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub constants: ConstantsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: usize,
    #[serde(default = "one")]
    pub eps: f64,
    #[serde(rename = "L", default = "one")]
    pub side: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub lambda: f64,
    pub mu: f64,
    pub m2: f64,
    pub normalisation: Normalisation,
    /// Scale of `covariance` and `sample`; `inf` for the full measure.
    pub t: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { lambda: 0.25, mu: 1.0, m2: 1.0, normalisation: Normalisation::Continuum, t: f64::INFINITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub scheme: Scheme,
    pub step_dt: f64,
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let c = ChainConfig::default();
        SamplerSection {
            scheme: c.scheme,
            step_dt: c.step_dt,
            n_burn: c.n_burn,
            n_keep: c.n_keep,
            thin: c.thin,
            chains: c.n_chains,
            seed: c.seed,
        }
    }
}

impl SamplerSection {
    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            scheme: self.scheme,
            step_dt: self.step_dt,
            n_burn: self.n_burn,
            n_keep: self.n_keep,
            thin: self.thin,
            n_chains: self.chains,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub t_min: f64,
    pub t_max: f64,
    pub per_decade: usize,
    /// Monte Carlo scales: `mc_per_decade` points per decade over `mc_decades`
    /// decades, starting one step above the skeleton window (or at `mc_t_min`).
    pub mc_per_decade: usize,
    pub mc_decades: usize,
    pub mc_t_min: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { t_min: 1e-6, t_max: 1e6, per_decade: 200, mc_per_decade: 4, mc_decades: 4, mc_t_min: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Gaussian,
    Mc,
    Skeleton,
    /// Skeleton bound inside the small-scale window, Monte Carlo beyond it.
    SkeletonMc,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    /// Whatever the source provides.
    Auto,
    Gaussian,
    Cap,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub source: SourceKind,
    /// CSV profile for `source = "file"`.
    pub path: Option<String>,
    pub tail: TailKind,
    pub tail_m2: Option<f64>,
    pub chi_bar: Option<f64>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection { source: SourceKind::SkeletonMc, path: None, tail: TailKind::Auto, tail_m2: None, chi_bar: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountertermSection {
    pub eps: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for CountertermSection {
    fn default() -> Self {
        CountertermSection { eps: vec![1.0, 0.5, 0.25, 0.125, 0.0625], lambdas: vec![0.5, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub nodes: usize,
    pub random_fields: usize,
    pub hessian_fields: usize,
    pub hessian_t: Vec<f64>,
    pub hessian_tol: f64,
    pub n_keep: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            nodes: 32,
            random_fields: 200,
            hessian_fields: 20,
            hessian_t: vec![0.1, 1.0, 10.0],
            hessian_tol: 1e-5,
            n_keep: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    Lattice,
    Shapes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSection {
    pub moments: MomentKind,
    /// Overrides the grid supremum defining `c₀`.
    pub c0: Option<f64>,
    /// Refinement family for fitted shape constants.
    pub shape_eps: Vec<f64>,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        ConstantsSection { moments: MomentKind::Lattice, c0: None, shape_eps: vec![0.5, 0.25, 0.125] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into(), formats: vec!["csv".into(), "json".into()] }
    }
}

impl OutputSection {
    pub fn csv(&self) -> bool {
        self.formats.iter().any(|f| f == "csv")
    }

    pub fn json(&self) -> bool {
        self.formats.iter().any(|f| f == "json")
    }
}

/// Parses `text`, reporting missing required keys by their dotted path.
pub fn parse(text: &str) -> Result<RunConfig> {
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    let has_d = value
        .get("lattice")
        .and_then(|l| l.as_table())
        .is_some_and(|l| l.contains_key("d"));
    if !has_d {
        return Err(Error::Config("missing required key `lattice.d`".into()));
    }
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lattice.d == 2 || self.lattice.d == 3) {
            return Err(Error::Config(format!("lattice.d must be 2 or 3, got {}", self.lattice.d)));
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(Error::Config(format!("output.formats: unknown format `{f}`")));
            }
        }
        if self.grid.per_decade == 0 || self.grid.mc_per_decade == 0 {
            return Err(Error::Config("grid.per_decade and grid.mc_per_decade must be at least 1".into()));
        }
        if self.profile.source == SourceKind::File && self.profile.path.is_none() {
            return Err(Error::Config("profile.path is required when profile.source = \"file\"".into()));
        }
        self.sampler.chain_config().validate()
    }

    /// Fully materialised configuration, every default written out.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise resolved config: {e}")))
    }
}
