//! Dense MLP models with hard parameter sharing.
//!
//! A backbone is a stack of dense layers with ReLU between them; the last
//! layer is linear and gives the latent representation. A head is a single linear layer on top of the
//! latent. STL models have one head, pairwise MTL models share one backbone
//! between two heads, and label-injected STL models read the partner task's
//! encoded label next to the regular input.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Reduction, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::tasks::Labels;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
}

impl BackboneConfig {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, latent_dim: usize) -> Result<Self> {
        let cfg = Self {
            input_dim,
            hidden_widths,
            latent_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Configuration(format!(
                "backbone widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(in, out)` of each backbone layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden_widths.iter().copied())
            .chain(std::iter::once(self.latent_dim))
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Per-example multiply-adds of the backbone alone.
    pub fn multiply_add_count(&self) -> u64 {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| (i * o) as u64)
            .sum()
    }

    /// Multiply-adds of the backbone plus one linear head per entry of
    /// `head_outputs`.
    pub fn count_with_heads(&self, head_outputs: &[usize]) -> u64 {
        self.multiply_add_count()
            + head_outputs
                .iter()
                .map(|&o| (self.latent_dim * o) as u64)
                .sum::<u64>()
    }

    pub fn with_input_dim(&self, input_dim: usize) -> Self {
        Self {
            input_dim,
            ..self.clone()
        }
    }

    fn scaled(&self, num: usize, den: usize) -> Self {
        let scale = |w: usize| ((w * num) / den).max(1);
        Self {
            input_dim: self.input_dim,
            hidden_widths: self.hidden_widths.iter().map(|&w| scale(w)).collect(),
            latent_dim: scale(self.latent_dim),
        }
    }
}

const HALVING_STEPS: usize = 1000;

/// Scales every hidden width (and the latent width) by the largest factor
/// `k / 1000` for which backbone plus a `head_outputs`-wide head costs at
/// most half of the same model at full width. Widths are floored and kept
/// at least 1.
pub fn half_capacity(full: &BackboneConfig, head_outputs: usize) -> Result<BackboneConfig> {
    full.validate()?;
    let budget = full.count_with_heads(&[head_outputs]);
    // count is non-decreasing in k, so scan from the top
    for k in (1..=HALVING_STEPS).rev() {
        let cfg = full.scaled(k, HALVING_STEPS);
        if 2 * cfg.count_with_heads(&[head_outputs]) <= budget {
            return Ok(cfg);
        }
    }
    Err(Error::Configuration(format!(
        "no width assignment >= 1 halves the capacity of {full:?}"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in × out`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
}

impl Dense {
    /// Uniform init with bound `sqrt(6 / fan_in)` (He) or
    /// `sqrt(6 / (fan_in + fan_out))` (Glorot), zero bias.
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, relu: bool) -> Self {
        let bound = if relu {
            (6.0 / fan_in as f64).sqrt()
        } else {
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        };
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], w).expect("positive dims"),
            bias: Tensor::zeros(vec![fan_out]).expect("positive dims"),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn multiply_adds(&self) -> u64 {
        (self.in_dim() * self.out_dim()) as u64
    }
}

fn dense_forward(tape: &mut Tape, x: Var, w: Var, b: Var, relu: bool) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    let h = tape.add(h, b)?;
    if relu {
        tape.relu(h)
    } else {
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub layers: Vec<Dense>,
}

impl Backbone {
    pub fn init(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Self {
        let dims = cfg.layer_dims();
        let last = dims.len() - 1;
        Self {
            layers: dims
                .into_iter()
                .enumerate()
                .map(|(k, (i, o))| Dense::init(rng, i, o, k < last))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().expect("non-empty backbone").out_dim()
    }

    pub fn n_params(&self) -> usize {
        2 * self.layers.len()
    }

    fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Forward pass with the layer parameters bound to `vars` (weight, bias
    /// per layer).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        let last = vars.len() / 2 - 1;
        for (k, pair) in vars.chunks(2).enumerate() {
            h = dense_forward(tape, h, pair[0], pair[1], k < last)?;
        }
        Ok(h)
    }

    fn multiply_adds(&self) -> u64 {
        self.layers.iter().map(Dense::multiply_adds).sum()
    }
}

/// Parameter access shared by every trainable model. The order of `params`
/// and `params_mut` is identical and fixed: backbone layers first, then
/// heads.
pub trait Network: Clone {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn multiply_add_count(&self) -> u64;

    /// Records every parameter on `tape` as a leaf.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| tape.leaf(p.clone().with_requires_grad(trainable)))
            .collect()
    }
}

/// Task loss of `out` against `targets` (rows already selected).
pub fn task_loss(tape: &mut Tape, out: Var, targets: &Labels, reduction: Reduction) -> Result<Var> {
    match targets {
        Labels::Values(t) => {
            let t = tape.constant(t.clone());
            tape.mse_loss(out, t, reduction)
        }
        Labels::Classes(c) => tape.softmax_cross_entropy(out, c, reduction),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlModel {
    pub task: String,
    pub backbone: Backbone,
    pub head: Dense,
}

impl StlModel {
    pub fn init(
        task: &str,
        cfg: &BackboneConfig,
        head_outputs: usize,
        backbone_rng: &mut ChaCha8Rng,
        head_rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            task: task.to_string(),
            backbone: Backbone::init(cfg, backbone_rng),
            head: Dense::init(head_rng, cfg.latent_dim, head_outputs, false),
        }
    }

    /// `(latent, output)` for inputs `x` with parameters bound to `vars`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let nb = self.backbone.n_params();
        let z = self.backbone.forward(tape, &vars[..nb], x)?;
        let out = dense_forward(tape, z, vars[nb], vars[nb + 1], false)?;
        Ok((z, out))
    }

    /// Backbone output for every row of `inputs`.
    pub fn latent(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let (z, _) = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(z).clone())
    }

    /// Mean loss over the rows of `inputs`.
    pub fn loss_on(&self, inputs: &Tensor, targets: &Labels) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let (_, out) = self.forward(&mut tape, &vars, x)?;
        let l = task_loss(&mut tape, out, targets, Reduction::Mean)?;
        Ok(tape.value(l).data()[0])
    }
}

impl Network for StlModel {
    fn params(&self) -> Vec<&Tensor> {
        self.backbone
            .params()
            .chain([&self.head.weight, &self.head.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.backbone
            .params_mut()
            .chain([&mut self.head.weight, &mut self.head.bias])
            .collect()
    }

    fn multiply_add_count(&self) -> u64 {
        self.backbone.multiply_adds() + self.head.multiply_adds()
    }
}

/// Pairwise MTL model: one shared backbone, heads for tasks `a` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlModel {
    pub tasks: (String, String),
    pub backbone: Backbone,
    pub head_a: Dense,
    pub head_b: Dense,
}

impl MtlModel {
    pub fn init(
        tasks: (&str, &str),
        cfg: &BackboneConfig,
        head_outputs: (usize, usize),
        backbone_rng: &mut ChaCha8Rng,
        mut head_rng: impl FnMut() -> ChaCha8Rng,
    ) -> Self {
        Self {
            tasks: (tasks.0.to_string(), tasks.1.to_string()),
            backbone: Backbone::init(cfg, backbone_rng),
            head_a: Dense::init(&mut head_rng(), cfg.latent_dim, head_outputs.0, false),
            head_b: Dense::init(&mut head_rng(), cfg.latent_dim, head_outputs.1, false),
        }
    }

    /// `(latent, out_a, out_b)`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var, Var)> {
        let nb = self.backbone.n_params();
        let z = self.backbone.forward(tape, &vars[..nb], x)?;
        let out_a = dense_forward(tape, z, vars[nb], vars[nb + 1], false)?;
        let out_b = dense_forward(tape, z, vars[nb + 2], vars[nb + 3], false)?;
        Ok((z, out_a, out_b))
    }

    /// Mean losses `(L_a, L_b)` over the rows of `inputs`.
    pub fn losses_on(&self, inputs: &Tensor, targets: (&Labels, &Labels)) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let (_, oa, ob) = self.forward(&mut tape, &vars, x)?;
        let la = task_loss(&mut tape, oa, targets.0, Reduction::Mean)?;
        let lb = task_loss(&mut tape, ob, targets.1, Reduction::Mean)?;
        Ok((tape.value(la).data()[0], tape.value(lb).data()[0]))
    }

    /// Number of backbone parameter tensors at the front of `params()`.
    pub fn backbone_param_count(&self) -> usize {
        self.backbone.n_params()
    }
}

impl Network for MtlModel {
    fn params(&self) -> Vec<&Tensor> {
        self.backbone
            .params()
            .chain([
                &self.head_a.weight,
                &self.head_a.bias,
                &self.head_b.weight,
                &self.head_b.bias,
            ])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.backbone
            .params_mut()
            .chain([
                &mut self.head_a.weight,
                &mut self.head_a.bias,
                &mut self.head_b.weight,
                &mut self.head_b.bias,
            ])
            .collect()
    }

    fn multiply_add_count(&self) -> u64 {
        self.backbone.multiply_adds() + self.head_a.multiply_adds() + self.head_b.multiply_adds()
    }
}

/// STL model for `target` whose input is `concat(x, encoded label of partner)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedStlModel {
    pub partner: String,
    /// Width of the partner label encoding appended to the input.
    pub label_width: usize,
    pub model: StlModel,
}

impl InjectedStlModel {
    pub fn target(&self) -> &str {
        &self.model.task
    }

    pub fn input_dim(&self) -> usize {
        self.model.backbone.input_dim()
    }

    /// Output for `x` with the partner encoding `injected` concatenated.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, injected: Var) -> Result<Var> {
        let joint = tape.concat_last_dim(x, injected)?;
        Ok(self.model.forward(tape, vars, joint)?.1)
    }

    pub fn loss_on(&self, inputs: &Tensor, injected: &Tensor, targets: &Labels) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let inj = tape.constant(injected.clone());
        let out = self.forward(&mut tape, &vars, x, inj)?;
        let l = task_loss(&mut tape, out, targets, Reduction::Mean)?;
        Ok(tape.value(l).data()[0])
    }
}

impl Network for InjectedStlModel {
    fn params(&self) -> Vec<&Tensor> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.params_mut()
    }

    fn multiply_add_count(&self) -> u64 {
        self.model.multiply_add_count()
    }
}
