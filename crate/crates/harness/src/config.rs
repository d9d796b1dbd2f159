//! Experiment configuration files (JSON, `"schema": 1`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use emflows::algorithms::{AlgorithmConfig, InitLaw, Representation, Scheme};
use emflows::laws::GaussianLaw;
use emflows::linalg::{Matrix, Vector};
use emflows::model::{
    make_conjugate_1d, make_hierarchical, make_quadratic, perturbed_model, pushforward_model, CosineWeight,
    HierarchicalModelConfig, ModelSpec,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub model: ModelBlock,
    pub algorithm: AlgorithmBlock,
    #[serde(default)]
    pub checks: ChecksBlock,
    #[serde(default)]
    pub bounds: BoundsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub base: BaseModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wrappers: Vec<Wrapper>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseModel {
    #[serde(rename = "conjugate_1d")]
    Conjugate1d {
        y: f64,
        prior_var: f64,
        obs_var: f64,
    },
    Hierarchical {
        /// One matrix per block, or a single matrix shared by all blocks.
        c: Vec<Vec<Vec<f64>>>,
        d: Vec<Vec<f64>>,
        sigma_u: Vec<Vec<f64>>,
        sigma_v: Vec<Vec<f64>>,
        /// Observation blocks, one row per block.
        y: Vec<Vec<f64>>,
    },
    /// `ℓ(θ, x) = −½ zᵀQz + gᵀz + constant` with `z = (θ, x)`.
    Quadratic {
        d_theta: usize,
        neg_hessian: Vec<Vec<f64>>,
        linear: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Wrapper {
    /// `x ↦ A x + b`.
    Pushforward { a: Vec<Vec<f64>>, b: Vec<f64> },
    Perturbation {
        weight: Weight,
        c: f64,
        lipschitz_theta: f64,
        lipschitz_x: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Weight {
    /// `w(x) = amplitude · cos(frequency · x)`.
    Cosine { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
pub enum StepUnit {
    #[serde(rename = "1/L_theta")]
    InvLipschitzTheta,
    #[serde(rename = "1/L_x")]
    InvLipschitzX,
    #[serde(rename = "1/L")]
    InvLipschitz,
}

/// A step size, either literal or as a multiple of a model constant.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum StepSpec {
    Value(f64),
    Scaled { scale: f64, of: StepUnit },
}

impl StepSpec {
    pub fn resolve(&self, model: &ModelSpec<f64>) -> f64 {
        match *self {
            StepSpec::Value(h) => h,
            StepSpec::Scaled { scale, of } => {
                let l = match of {
                    StepUnit::InvLipschitzTheta => model.lipschitz_theta(),
                    StepUnit::InvLipschitzX => model.lipschitz_x(),
                    StepUnit::InvLipschitz => model.lipschitz(),
                };
                scale / l
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum InitLawSpec {
    Named(InitLawName),
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitLawName {
    Posterior,
}

fn default_representation() -> String {
    Representation::ExactGaussian.as_str().to_string()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmBlock {
    pub scheme: String,
    #[serde(default)]
    pub step_h: Option<StepSpec>,
    pub iterations: usize,
    #[serde(default = "default_representation")]
    pub representation: String,
    #[serde(default)]
    pub particle_count: usize,
    #[serde(default)]
    pub seed: u64,
    pub init_theta: Vec<f64>,
    #[serde(default)]
    pub init_law: Option<InitLawSpec>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaCheck {
    /// Defaults to the certified constant.
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EmptyCheck {}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksBlock {
    #[serde(default)]
    pub xlsi: Option<LambdaCheck>,
    #[serde(default)]
    pub xt2i: Option<LambdaCheck>,
    #[serde(default)]
    pub descent: Option<EmptyCheck>,
    #[serde(default)]
    pub monotonicity: Option<EmptyCheck>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StepOverride {
    #[serde(default)]
    pub h: Option<StepSpec>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsBlock {
    #[serde(default)]
    pub em_basic: Option<EmptyCheck>,
    #[serde(default)]
    pub em_sharp: Option<EmptyCheck>,
    #[serde(default)]
    pub first_order: Option<StepOverride>,
    #[serde(default)]
    pub langevin_em: Option<StepOverride>,
    #[serde(default)]
    pub agd: Option<StepOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))?;
        if cfg.schema != SCHEMA_VERSION {
            bail!("invalid config: schema must be {SCHEMA_VERSION}, got {}", cfg.schema);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn scheme(&self) -> Result<Scheme> {
        self.algorithm
            .scheme
            .parse()
            .map_err(|e| anyhow!("algorithm.scheme: {e}"))
    }

    pub fn representation(&self) -> Result<Representation> {
        self.algorithm
            .representation
            .parse()
            .map_err(|e| anyhow!("algorithm.representation: {e}"))
    }

    /// Rejects checks and bounds that do not apply to the configured scheme.
    pub fn validate(&self) -> Result<()> {
        let scheme = self.scheme()?;
        let rep = self.representation()?;
        let c = &self.checks;
        if rep == Representation::Particles && (c.xlsi.is_some() || c.xt2i.is_some()) {
            bail!("checks.xlsi/checks.xt2i: inequality checks need representation `exact_gaussian`");
        }
        if scheme != Scheme::Em {
            if c.descent.is_some() {
                bail!("checks.descent: the descent check applies to `em` only, not `{scheme}`");
            }
            if c.monotonicity.is_some() {
                bail!("checks.monotonicity: the monotonicity check applies to `em` only, not `{scheme}`");
            }
        }
        if let Some(t) = c.tolerance {
            if !(t >= 0.0 && t.is_finite()) {
                bail!("checks.tolerance must be finite and ≥ 0, got {t}");
            }
        }
        for (name, lam) in [("xlsi", &c.xlsi), ("xt2i", &c.xt2i)] {
            if let Some(LambdaCheck { lambda: Some(l) }) = lam {
                if !(*l > 0.0 && l.is_finite()) {
                    bail!("checks.{name}.lambda must be positive, got {l}");
                }
            }
        }
        let b = &self.bounds;
        let wanted = [
            ("em_basic", b.em_basic.is_some(), Scheme::Em),
            ("em_sharp", b.em_sharp.is_some(), Scheme::Em),
            ("first_order", b.first_order.is_some(), Scheme::FirstOrderEm),
            ("langevin_em", b.langevin_em.is_some(), Scheme::LangevinEm),
            ("agd", b.agd.is_some(), Scheme::Agd),
        ];
        for (name, present, applies) in wanted {
            if present && scheme != applies {
                bail!("bounds.{name}: bound applies to `{applies}`, but the scheme is `{scheme}`");
            }
        }
        if self.output.formats.is_empty() {
            bail!("output.formats must not be empty");
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec<f64>> {
        build_model(&self.model)
    }

    pub fn build_algorithm(&self, model: &ModelSpec<f64>, seed: Option<u64>) -> Result<AlgorithmConfig<f64>> {
        let a = &self.algorithm;
        let scheme = self.scheme()?;
        let step_h = match (&a.step_h, scheme) {
            (Some(s), _) => s.resolve(model),
            (None, Scheme::Em) => 0.0,
            (None, _) => bail!("algorithm.step_h is required for `{scheme}`"),
        };
        let init_law = match &a.init_law {
            None | Some(InitLawSpec::Named(InitLawName::Posterior)) => InitLaw::PosteriorAtInit,
            Some(InitLawSpec::Gaussian { mean, cov }) => InitLaw::Gaussian(
                GaussianLaw::new(Vector::from_column_slice(mean), matrix(cov, "algorithm.init_law.cov")?)
                    .map_err(|e| anyhow!("algorithm.init_law: {e}"))?,
            ),
        };
        Ok(AlgorithmConfig {
            scheme,
            step_h,
            iterations: a.iterations,
            representation: self.representation()?,
            particle_count: a.particle_count,
            seed: seed.unwrap_or(a.seed),
            init_theta: Vector::from_column_slice(&a.init_theta),
            init_law,
        })
    }
}

pub fn matrix(rows: &[Vec<f64>], field: &str) -> Result<Matrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        bail!("{field}: matrix must be non-empty");
    }
    if rows.iter().any(|row| row.len() != c) {
        bail!("{field}: rows have different lengths");
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn build_model(block: &ModelBlock) -> Result<ModelSpec<f64>> {
    let mut model = match &block.base {
        BaseModel::Conjugate1d { y, prior_var, obs_var } => {
            make_conjugate_1d(*y, *prior_var, *obs_var).map_err(|e| anyhow!("model.base: {e}"))?
        }
        BaseModel::Hierarchical { c, d, sigma_u, sigma_v, y } => {
            let blocks = y.len();
            if blocks == 0 {
                bail!("model.base.y: at least one observation block is required");
            }
            let mut cs = c
                .iter()
                .enumerate()
                .map(|(i, m)| matrix(m, &format!("model.base.c[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            if cs.len() == 1 && blocks > 1 {
                cs = vec![cs[0].clone(); blocks];
            }
            if cs.len() != blocks {
                bail!("model.base.c: expected 1 or {blocks} matrices, got {}", cs.len());
            }
            let cfg = HierarchicalModelConfig {
                blocks,
                c: cs,
                d: matrix(d, "model.base.d")?,
                sigma_u: matrix(sigma_u, "model.base.sigma_u")?,
                sigma_v: matrix(sigma_v, "model.base.sigma_v")?,
                y: Vector::from_iterator(y.iter().map(Vec::len).sum(), y.iter().flatten().copied()),
            };
            make_hierarchical(&cfg).map_err(|e| anyhow!("model.base: {e}"))?
        }
        BaseModel::Quadratic {
            d_theta,
            neg_hessian,
            linear,
            constant,
        } => make_quadratic(
            "quadratic",
            *d_theta,
            matrix(neg_hessian, "model.base.neg_hessian")?,
            Vector::from_column_slice(linear),
            *constant,
        )
        .map_err(|e| anyhow!("model.base: {e}"))?,
    };
    for (i, w) in block.wrappers.iter().enumerate() {
        let field = format!("model.wrappers[{i}]");
        model = match w {
            Wrapper::Pushforward { a, b } => {
                pushforward_model(&model, &matrix(a, &format!("{field}.a"))?, &Vector::from_column_slice(b))
                    .map_err(|e| anyhow!("{field}: {e}"))?
            }
            Wrapper::Perturbation {
                weight,
                c,
                lipschitz_theta,
                lipschitz_x,
            } => {
                let weight = match weight {
                    Weight::Cosine { amplitude, frequency } => Arc::new(CosineWeight {
                        amplitude: *amplitude,
                        frequency: *frequency,
                    }),
                };
                perturbed_model(&model, weight, *c, *lipschitz_theta, *lipschitz_x)
                    .map_err(|e| anyhow!("{field}: {e}"))?
            }
        };
    }
    Ok(model)
}
