//! Parameter groups and their initialization.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// One fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// out x in weight matrix.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Feature extractor: rectifier MLP mapping d -> m. ReLU is applied
/// between layers, not after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    pub layers: Vec<LinearLayer>,
}

impl ExtractorParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.weights.cols()).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.rows()).unwrap_or(0)
    }
}

/// Domain-adaptive layer: `z = ((W x + b) - mu) / sigma * gamma + beta`,
/// the only group clients train. `sigma` stores the running standard
/// deviation and is kept >= `bn_epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationParams {
    pub w: Matrix,
    /// Scalar bias, broadcast across all m dimensions.
    pub b: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl AdaptationParams {
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Classification head: a fully connected layer over the adapted embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// L x m weight matrix.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    pub fn class_count(&self) -> usize {
        self.weights.rows()
    }
}

/// Full parameter snapshot. The freezing flags gate gradient application
/// only; forward outputs never depend on them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub phi: ExtractorParams,
    pub psi: AdaptationParams,
    pub nu: ClassifierParams,
    pub frozen_phi: bool,
    pub frozen_nu: bool,
}

/// Parameter group selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Extractor,
    Adaptation,
    Classifier,
}

/// Shape and initialization knobs for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub class_count: usize,
    /// Std of the normal draw for the adapter / classifier linear weights.
    pub init_std: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.input_dim == 0 {
            bad.push("input_dim = 0");
        }
        if self.embedding_dim == 0 {
            bad.push("embedding_dim = 0");
        }
        if self.class_count == 0 {
            bad.push("class_count = 0");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            bad.push("bn_momentum outside (0, 1]");
        }
        if self.bn_epsilon <= 0.0 {
            bad.push("bn_epsilon <= 0");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join(", ")))
        }
    }
}

/// Optimizer hyperparameters for one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

fn xavier_normal(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Matrix::random_normal(rows, cols, std, rng)
}

impl ModelParams {
    /// Fresh parameters: Xavier-normal extractor layers and batch-norm
    /// gain, small-normal linear weights, zero biases, unit running std.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.embedding_dim;
        let mut layers = Vec::new();
        let mut in_dim = cfg.input_dim;
        for &h in cfg.hidden.iter().chain(std::iter::once(&m)) {
            layers.push(LinearLayer {
                weights: xavier_normal(h, in_dim, rng),
                bias: vec![0.0; h],
            });
            in_dim = h;
        }
        let gamma_std = (2.0 / (2 * m) as f64).sqrt();
        let psi = AdaptationParams {
            w: Matrix::random_normal(m, m, cfg.init_std, rng),
            b: 0.0,
            gamma: (0..m).map(|_| rng.normal_scaled(0.0, gamma_std)).collect(),
            beta: vec![0.0; m],
            mu: vec![0.0; m],
            sigma: vec![1.0; m],
            bn_momentum: cfg.bn_momentum,
            bn_epsilon: cfg.bn_epsilon,
        };
        let nu = ClassifierParams {
            weights: Matrix::random_normal(cfg.class_count, m, cfg.init_std, rng),
            bias: vec![0.0; cfg.class_count],
        };
        Ok(ModelParams {
            phi: ExtractorParams { layers },
            psi,
            nu,
            frozen_phi: false,
            frozen_nu: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.phi.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.psi.dim()
    }

    pub fn class_count(&self) -> usize {
        self.nu.class_count()
    }
}

/// Set freezing flags for the given groups. The adaptation layer is the
/// sole client-trainable group and cannot be frozen.
pub fn freeze(params: &mut ModelParams, groups: &[ParamGroup]) -> Result<()> {
    if groups.contains(&ParamGroup::Adaptation) {
        return Err(Error::UnsupportedFreeze("adaptation"));
    }
    for g in groups {
        match g {
            ParamGroup::Extractor => params.frozen_phi = true,
            ParamGroup::Classifier => params.frozen_nu = true,
            ParamGroup::Adaptation => unreachable!(),
        }
    }
    Ok(())
}
