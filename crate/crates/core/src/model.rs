//! The differentiator-integrator network.
//!
//! The differentiator returns full time derivatives
//! `F_u = -u·∇u [+ k_u Δu] + R_u(x, u, c)` and
//! `F_x = -u·∇x + k Δx + R_x(x, u, c)`, with the advection and diffusion
//! branches computed by fixed stencils and the reaction branches by
//! convolution stacks. The integrator adds a numerical increment Ψ (Heun or
//! RK4) and, optionally, a learned correction `S(fields, F)`.
//!
//! Parameter names are prefixed `diff.` (differentiator, θ) or `corr.`
//! (correction, φ), so either set can be frozen by name.
//!
//! All physics happens in physical units. Networks see fields mapped to
//! roughly `[-1, 1]` by the dataset statistics; reaction outputs are scaled by
//! the largest observed rate of change of each channel and correction outputs
//! by that rate times `dt`.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, Graph, ParamStore, Tensor, Var};
use crate::dataset::{ChannelStats, Dataset, Split};
use crate::error::{Error, Result};
use crate::fdops::{Axis, Boundary, LineStencil, Order};
use crate::fields::{Field, Snapshot, Trajectory, VELOCITY_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Heun,
    Rk4,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Heun => "heun",
            Scheme::Rk4 => "rk4",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heun" => Ok(Scheme::Heun),
            "rk4" => Ok(Scheme::Rk4),
            _ => Err(Error::Validation(format!("unknown integrator {s:?} (heun, rk4)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub dt: f64,
    pub use_correction: bool,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, dt: f64, use_correction: bool) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("integrator dt must be positive, got {dt}")));
        }
        Ok(Self {
            scheme,
            dt,
            use_correction,
        })
    }
}

/// `Ψ` for one step of `ds/dt = f(s)` from `state`, built on `g` so that
/// gradients flow through every stage. Returns `(Ψ, f(state))`.
pub fn psi_step(
    g: &mut Graph,
    state: Var,
    scheme: Scheme,
    dt: f64,
    f: &mut dyn FnMut(&mut Graph, Var) -> Result<Var>,
) -> Result<(Var, Var)> {
    let k1 = f(g, state)?;
    let stage = |g: &mut Graph, k: Var, h: f64| -> Result<Var> {
        let d = g.scale(k, h);
        g.add(state, d)
    };
    match scheme {
        Scheme::Heun => {
            let s1 = stage(g, k1, dt)?;
            let k2 = f(g, s1)?;
            let sum = g.add(k1, k2)?;
            Ok((g.scale(sum, 0.5 * dt), k1))
        }
        Scheme::Rk4 => {
            let s2 = stage(g, k1, 0.5 * dt)?;
            let k2 = f(g, s2)?;
            let s3 = stage(g, k2, 0.5 * dt)?;
            let k3 = f(g, s3)?;
            let s4 = stage(g, k3, dt)?;
            let k4 = f(g, s4)?;
            let k23 = g.add(k2, k3)?;
            let k23 = g.scale(k23, 2.0);
            let a = g.add(k1, k23)?;
            let sum = g.add(a, k4)?;
            Ok((g.scale(sum, dt / 6.0), k1))
        }
    }
}

/// Layout of one convolution stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StackConfig {
    pub layers: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl StackConfig {
    pub fn reaction_default() -> Self {
        Self {
            layers: 4,
            hidden: 48,
            kernel: 3,
            activation: Activation::Tanh,
        }
    }

    pub fn correction_default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            kernel: 3,
            activation: Activation::Tanh,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "{what} stack needs at least one layer, non-zero width and an odd kernel"
            )));
        }
        Ok(())
    }
}

/// A PDE constant fed to the reaction networks as a constant-valued channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstantInput {
    pub name: String,
    /// Feed `1/value` instead of `value`.
    pub inverse: bool,
}

impl ConstantInput {
    pub fn label(&self) -> String {
        if self.inverse {
            format!("1/{}", self.name)
        } else {
            self.name.clone()
        }
    }

    pub fn value(&self, constants: &BTreeMap<String, f64>) -> Result<f64> {
        let v = *constants
            .get(&self.name)
            .ok_or_else(|| Error::Validation(format!("model needs constant {:?}", self.name)))?;
        Ok(if self.inverse { 1.0 / v } else { v })
    }
}

impl FromStr for ConstantInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, inverse) = match s.strip_prefix("1/") {
            Some(n) => (n, true),
            None => (s, false),
        };
        if name.is_empty() {
            return Err(Error::Validation(format!("empty constant name in {s:?}")));
        }
        Ok(Self {
            name: name.to_string(),
            inverse,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Non-velocity channels, in snapshot order.
    pub state_channels: Vec<String>,
    /// State channels without dynamics of their own (e.g. a microstructure
    /// map). They are advected if `include_advection_of_state` is set and
    /// otherwise passed through unchanged.
    pub static_channels: Vec<String>,
    pub constants: Vec<ConstantInput>,
    pub reaction: StackConfig,
    pub correction: StackConfig,
    pub include_diffusion_in_momentum: bool,
    pub include_advection_of_state: bool,
    /// Initial value of every diffusivity.
    pub diffusivity: f64,
    pub learn_diffusivity: bool,
}

impl Default for ModelConfig {
    /// Burgers layout: velocity only, conditioned on `1/R`.
    fn default() -> Self {
        Self {
            state_channels: Vec::new(),
            static_channels: Vec::new(),
            constants: vec![ConstantInput {
                name: "R".into(),
                inverse: true,
            }],
            reaction: StackConfig::reaction_default(),
            correction: StackConfig::correction_default(),
            include_diffusion_in_momentum: false,
            include_advection_of_state: true,
            diffusivity: 0.0,
            learn_diffusivity: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.reaction.validate("reaction")?;
        self.correction.validate("correction")?;
        for s in &self.static_channels {
            if !self.state_channels.contains(s) {
                return Err(Error::Validation(format!("static channel {s:?} is not a state channel")));
            }
        }
        if !(self.diffusivity >= 0.0 && self.diffusivity.is_finite()) {
            return Err(Error::Validation(format!("diffusivity must be non-negative, got {}", self.diffusivity)));
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        VELOCITY_NAMES.iter().map(|s| s.to_string()).chain(self.state_channels.iter().cloned()).collect()
    }

    pub fn n_channels(&self) -> usize {
        2 + self.state_channels.len()
    }

    /// Indices (into the full channel list) of the dynamic state channels.
    pub fn dynamic_indices(&self) -> Vec<usize> {
        self.state_channels
            .iter()
            .enumerate()
            .filter(|(_, n)| !self.static_channels.contains(n))
            .map(|(i, _)| i + 2)
            .collect()
    }

    fn has_diffusivity_param(&self) -> bool {
        self.learn_diffusivity || self.diffusivity > 0.0
    }
}

/// Per-channel affine maps between physical and network units.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
    /// Largest `|x_{k+1} - x_k| / dt` seen in the data, per channel.
    pub rate_scale: Vec<f64>,
    pub const_center: Vec<f64>,
    pub const_half_range: Vec<f64>,
}

impl Normalization {
    /// Identity map: zero center, unit ranges and rates.
    pub fn identity(channels: usize, constants: usize) -> Self {
        Self {
            center: vec![0.0; channels],
            half_range: vec![1.0; channels],
            rate_scale: vec![1.0; channels],
            const_center: vec![0.0; constants],
            const_half_range: vec![1.0; constants],
        }
    }

    /// Statistics from the training split (or from every entry if the
    /// dataset has no training entries).
    pub fn from_dataset(ds: &Dataset, config: &ModelConfig) -> Result<Self> {
        let names = config.channel_names();
        if ds.channel_names() != names.as_slice() {
            return Err(Error::Shape(format!(
                "dataset channels {:?} do not match the model layout {names:?}",
                ds.channel_names()
            )));
        }
        let mut entries: Vec<_> = ds.split(Split::Train).collect();
        if entries.is_empty() {
            entries = ds.entries().iter().collect();
        }
        let mut center = Vec::new();
        let mut half_range = Vec::new();
        let mut rate_scale = Vec::new();
        for c in 0..names.len() {
            let values = entries
                .iter()
                .flat_map(|e| e.trajectory.snapshots())
                .flat_map(|s| s.channels().nth(c).expect("layout checked").values());
            let st = ChannelStats::from_values(values)?;
            center.push(st.center());
            half_range.push(st.half_range());
            let mut rate = 0.0f64;
            for e in &entries {
                let s = e.trajectory.snapshots();
                for k in 1..s.len() {
                    let a = s[k - 1].channels().nth(c).expect("layout").values();
                    let b = s[k].channels().nth(c).expect("layout").values();
                    for (x, y) in a.iter().zip(b) {
                        rate = rate.max((y - x).abs());
                    }
                }
            }
            rate /= ds.dt();
            rate_scale.push(if rate > 0.0 { rate } else { 1.0 });
        }
        let mut const_center = Vec::new();
        let mut const_half_range = Vec::new();
        for ci in &config.constants {
            let values: Vec<f64> = entries
                .iter()
                .map(|e| ci.value(&e.constants))
                .collect::<Result<_>>()?;
            let st = ChannelStats::from_values(&values)?;
            const_center.push(st.center());
            const_half_range.push(st.half_range());
        }
        Ok(Self {
            center,
            half_range,
            rate_scale,
            const_center,
            const_half_range,
        })
    }

    /// Normalization as named tensors for checkpointing.
    pub fn to_blocks(&self) -> ParamStore {
        let t = |v: &Vec<f64>| Tensor::new(vec![v.len()], v.clone()).expect("1D");
        [
            ("norm.center", t(&self.center)),
            ("norm.half_range", t(&self.half_range)),
            ("norm.rate_scale", t(&self.rate_scale)),
            ("norm.const_center", t(&self.const_center)),
            ("norm.const_half_range", t(&self.const_half_range)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_blocks(blocks: &ParamStore) -> Result<Self> {
        let get = |k: &str| -> Result<Vec<f64>> {
            blocks
                .get(k)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks block {k:?}")))
        };
        Ok(Self {
            center: get("norm.center")?,
            half_range: get("norm.half_range")?,
            rate_scale: get("norm.rate_scale")?,
            const_center: get("norm.const_center")?,
            const_half_range: get("norm.const_half_range")?,
        })
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        let c = config.n_channels();
        let k = config.constants.len();
        let ok = self.center.len() == c
            && self.half_range.len() == c
            && self.rate_scale.len() == c
            && self.const_center.len() == k
            && self.const_half_range.len() == k;
        let positive = self.half_range.iter().chain(&self.rate_scale).chain(&self.const_half_range).all(|&v| v > 0.0);
        if !ok {
            return Err(Error::Shape(format!("normalization does not match {c} channels and {k} constants")));
        }
        if !positive {
            return Err(Error::Validation("normalization ranges must be positive".into()));
        }
        Ok(())
    }
}

pub fn is_differentiator_param(name: &str) -> bool {
    name.starts_with("diff.")
}

pub fn is_correction_param(name: &str) -> bool {
    name.starts_with("corr.")
}

fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Stack `prefix.l{i}.{w,b}` applied to `input`, activation between layers
/// and a linear output layer.
fn stack_forward(g: &mut Graph, vars: &BTreeMap<String, Var>, prefix: &str, cfg: &StackConfig, input: Var) -> Result<Var> {
    let mut h = input;
    for i in 0..cfg.layers {
        let w = vars[&format!("{prefix}.l{i}.w")];
        let b = vars[&format!("{prefix}.l{i}.b")];
        h = g.conv2d(h, w, b)?;
        if i + 1 < cfg.layers {
            h = g.activation(h, cfg.activation);
        }
    }
    Ok(h)
}

/// The differentiator, the correction networks and their normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub norm: Normalization,
    pub params: ParamStore,
}

impl Model {
    /// Fan-in uniform kernels, zero biases, zero final correction layers.
    pub fn init(config: ModelConfig, norm: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        norm.check(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = config.n_channels();
        let k = config.constants.len();
        let n_dyn = config.dynamic_indices().len();

        let mut add_stack = |params: &mut ParamStore, prefix: &str, cfg: &StackConfig, c_in: usize, c_out: usize, zero_last: bool| {
            for i in 0..cfg.layers {
                let ci = if i == 0 { c_in } else { cfg.hidden };
                let co = if i + 1 == cfg.layers { c_out } else { cfg.hidden };
                let fan_in = (ci * cfg.kernel * cfg.kernel) as f64;
                let bound = 1.0 / fan_in.sqrt();
                let n = co * ci * cfg.kernel * cfg.kernel;
                let data: Vec<f64> = if zero_last && i + 1 == cfg.layers {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                let w = Tensor::new(vec![co, ci, cfg.kernel, cfg.kernel], data).expect("kernel shape");
                params.insert(format!("{prefix}.l{i}.w"), w);
                params.insert(format!("{prefix}.l{i}.b"), Tensor::zeros(&[co]));
            }
        };
        add_stack(&mut params, "diff.reaction_u", &config.reaction, c + k, 2, false);
        if n_dyn > 0 {
            add_stack(&mut params, "diff.reaction_x", &config.reaction, c + k, n_dyn, false);
        }
        add_stack(&mut params, "corr.u", &config.correction, 4, 2, true);
        if n_dyn > 0 {
            add_stack(&mut params, "corr.x", &config.correction, 2 * n_dyn, n_dyn, true);
        }
        if config.has_diffusivity_param() {
            let raw = softplus_inverse(config.diffusivity.max(1e-6));
            if n_dyn > 0 {
                params.insert("diff.k_x".into(), Tensor::filled(&[n_dyn], raw));
            }
            if config.include_diffusion_in_momentum {
                params.insert("diff.k_u".into(), Tensor::filled(&[1], raw));
            }
        }
        Ok(Self { config, norm, params })
    }

    /// Reassembles a model from stored parameters, checking every block.
    pub fn from_parts(config: ModelConfig, norm: Normalization, params: ParamStore) -> Result<Self> {
        let reference = Self::init(config, norm, 0)?;
        for (name, t) in &reference.params {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Shape(format!("parameter {name:?} has shape {:?}, expected {:?}", p.shape(), t.shape())))
                }
                None => return Err(Error::Validation(format!("missing parameter block {name:?}"))),
            }
        }
        if let Some(extra) = params.keys().find(|k| !reference.params.contains_key(*k)) {
            return Err(Error::Validation(format!("unexpected parameter block {extra:?}")));
        }
        Ok(Self {
            params,
            ..reference
        })
    }

    /// θ: differentiator parameters that training may update.
    pub fn trainable_differentiator(&self) -> Vec<String> {
        self.params
            .keys()
            .filter(|k| is_differentiator_param(k))
            .filter(|k| self.config.learn_diffusivity || !k.starts_with("diff.k_"))
            .cloned()
            .collect()
    }

    /// φ: correction parameters.
    pub fn correction_names(&self) -> Vec<String> {
        self.params.keys().filter(|k| is_correction_param(k)).cloned().collect()
    }

    pub fn theta(&self) -> ParamStore {
        self.params.iter().filter(|(k, _)| is_differentiator_param(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Current diffusivities `(k_x per dynamic channel, k_u)`.
    pub fn diffusivities(&self) -> (Vec<f64>, Option<f64>) {
        let sp = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
        let kx = self.params.get("diff.k_x").map(|t| t.data().iter().map(|&x| sp(x)).collect()).unwrap_or_default();
        let ku = self.params.get("diff.k_u").map(|t| sp(t.data()[0]));
        (kx, ku)
    }

    pub fn check_snapshot(&self, s: &Snapshot) -> Result<()> {
        let names = self.config.channel_names();
        if s.channel_names() != names.as_slice() {
            return Err(Error::Shape(format!(
                "snapshot channels {:?} do not match the model layout {names:?}",
                s.channel_names()
            )));
        }
        Ok(())
    }

    /// `[K, H, W]` tensor of normalized constant channels.
    pub fn constant_tensor(&self, constants: &BTreeMap<String, f64>, height: usize, width: usize) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.config.constants.len() * height * width);
        for (i, ci) in self.config.constants.iter().enumerate() {
            let v = (ci.value(constants)? - self.norm.const_center[i]) / self.norm.const_half_range[i];
            data.extend(std::iter::repeat_n(v, height * width));
        }
        Tensor::new(vec![self.config.constants.len(), height, width], data)
    }

    fn normalized(&self, g: &mut Graph, x: Var, channels: &[usize]) -> Result<Var> {
        let scale: Vec<f64> = channels.iter().map(|&c| 1.0 / self.norm.half_range[c]).collect();
        let shift: Vec<f64> = channels.iter().map(|&c| -self.norm.center[c] / self.norm.half_range[c]).collect();
        g.channel_affine(x, &scale, &shift)
    }

    /// Full `F = [F_u; F_x]` for a physical `[C, H, W]` state on spacing `dx`.
    /// `cond` is the constant-channel tensor (absent when there are none).
    pub fn f_graph(&self, g: &mut Graph, vars: &BTreeMap<String, Var>, state: Var, cond: Option<Var>, dx: f64) -> Result<Var> {
        let cfg = &self.config;
        let (c, h, w) = g.value(state).chw()?;
        if c != cfg.n_channels() {
            return Err(Error::Shape(format!("state has {c} channels, model expects {}", cfg.n_channels())));
        }
        let st = |axis, order| LineStencil {
            axis,
            order,
            boundary: Boundary::Replicate,
            dx,
        };
        let ux = g.slice(state, 0, 1)?;
        let uy = g.slice(state, 1, 1)?;
        let advect = |g: &mut Graph, phi: Var| -> Result<Var> {
            let gx = g.stencil(phi, st(Axis::X, Order::First))?;
            let gy = g.stencil(phi, st(Axis::Y, Order::First))?;
            let a = g.mul(ux, gx)?;
            let b = g.mul(uy, gy)?;
            g.add(a, b)
        };
        let laplacian = |g: &mut Graph, phi: Var| -> Result<Var> {
            let xx = g.stencil(phi, st(Axis::X, Order::Second))?;
            let yy = g.stencil(phi, st(Axis::Y, Order::Second))?;
            g.add(xx, yy)
        };

        let all: Vec<usize> = (0..c).collect();
        let norm = self.normalized(g, state, &all)?;
        let net_in = match cond {
            Some(k) => g.concat(&[norm, k])?,
            None => norm,
        };
        let r_u = stack_forward(g, vars, "diff.reaction_u", &cfg.reaction, net_in)?;
        let r_u = g.channel_affine(r_u, &self.norm.rate_scale[..2], &[0.0, 0.0])?;
        let dyn_idx = cfg.dynamic_indices();
        let r_x = if dyn_idx.is_empty() {
            None
        } else {
            let r = stack_forward(g, vars, "diff.reaction_x", &cfg.reaction, net_in)?;
            let scale: Vec<f64> = dyn_idx.iter().map(|&i| self.norm.rate_scale[i]).collect();
            Some(g.channel_affine(r, &scale, &vec![0.0; dyn_idx.len()])?)
        };
        let k_x = match (vars.get("diff.k_x"), dyn_idx.is_empty()) {
            (Some(&raw), false) => Some(g.softplus(raw)),
            _ => None,
        };
        let k_u = vars.get("diff.k_u").copied().map(|raw| g.softplus(raw));

        let mut parts = Vec::with_capacity(c);
        for comp in 0..2 {
            let phi = if comp == 0 { ux } else { uy };
            let adv = advect(g, phi)?;
            let mut f = g.scale(adv, -1.0);
            if let (true, Some(k)) = (cfg.include_diffusion_in_momentum, k_u) {
                let lap = laplacian(g, phi)?;
                let d = g.scale_by(lap, k)?;
                f = g.add(f, d)?;
            }
            let r = g.slice(r_u, comp, 1)?;
            parts.push(g.add(f, r)?);
        }
        for ch in 2..c {
            let phi = g.slice(state, ch, 1)?;
            match dyn_idx.iter().position(|&i| i == ch) {
                Some(j) => {
                    let adv = advect(g, phi)?;
                    let mut f = g.scale(adv, -1.0);
                    if let Some(k) = k_x {
                        let kj = g.slice(k, j, 1)?;
                        let lap = laplacian(g, phi)?;
                        let d = g.scale_by(lap, kj)?;
                        f = g.add(f, d)?;
                    }
                    let r = g.slice(r_x.expect("dynamic channels have a reaction net"), j, 1)?;
                    parts.push(g.add(f, r)?);
                }
                None if cfg.include_advection_of_state => {
                    let adv = advect(g, phi)?;
                    parts.push(g.scale(adv, -1.0));
                }
                None => parts.push(g.input(Tensor::zeros(&[1, h, w]))),
            }
        }
        g.concat(&parts)
    }

    /// Learned increment `S` from the current state and its `F`, in channel
    /// order; static channels get zero.
    pub fn correction_graph(&self, g: &mut Graph, vars: &BTreeMap<String, Var>, state: Var, f: Var, dt: f64) -> Result<Var> {
        let cfg = &self.config;
        let (c, h, w) = g.value(state).chw()?;
        let branch = |g: &mut Graph, prefix: &str, idx: &[usize]| -> Result<Vec<Var>> {
            let mut fields = Vec::new();
            let mut rates = Vec::new();
            for &i in idx {
                fields.push(g.slice(state, i, 1)?);
                rates.push(g.slice(f, i, 1)?);
            }
            let x = g.concat(&fields)?;
            let x = self.normalized(g, x, idx)?;
            let r = g.concat(&rates)?;
            let inv: Vec<f64> = idx.iter().map(|&i| 1.0 / self.norm.rate_scale[i]).collect();
            let r = g.channel_affine(r, &inv, &vec![0.0; idx.len()])?;
            let input = g.concat(&[x, r])?;
            let out = stack_forward(g, vars, prefix, &cfg.correction, input)?;
            let scale: Vec<f64> = idx.iter().map(|&i| self.norm.rate_scale[i] * dt).collect();
            let out = g.channel_affine(out, &scale, &vec![0.0; idx.len()])?;
            (0..idx.len()).map(|j| g.slice(out, j, 1)).collect()
        };
        let su = branch(g, "corr.u", &[0, 1])?;
        let dyn_idx = cfg.dynamic_indices();
        let sx = if dyn_idx.is_empty() { Vec::new() } else { branch(g, "corr.x", &dyn_idx)? };
        let mut parts = su;
        for ch in 2..c {
            match dyn_idx.iter().position(|&i| i == ch) {
                Some(j) => parts.push(sx[j]),
                None => parts.push(g.input(Tensor::zeros(&[1, h, w]))),
            }
        }
        g.concat(&parts)
    }

    /// `(Ψ, F(state))` for one step.
    pub fn psi_graph(
        &self,
        g: &mut Graph,
        vars: &BTreeMap<String, Var>,
        state: Var,
        cond: Option<Var>,
        dx: f64,
        spec: &IntegratorSpec,
    ) -> Result<(Var, Var)> {
        psi_step(g, state, spec.scheme, spec.dt, &mut |g, s| self.f_graph(g, vars, s, cond, dx))
    }

    /// Next state `s + Ψ (+ S)` on the graph.
    pub fn step_graph(
        &self,
        g: &mut Graph,
        vars: &BTreeMap<String, Var>,
        state: Var,
        cond: Option<Var>,
        dx: f64,
        spec: &IntegratorSpec,
    ) -> Result<Var> {
        let (psi, f) = self.psi_graph(g, vars, state, cond, dx, spec)?;
        let next = g.add(state, psi)?;
        if spec.use_correction {
            let s = self.correction_graph(g, vars, state, f, spec.dt)?;
            g.add(next, s)
        } else {
            Ok(next)
        }
    }

    fn inference_graph(&self, s: &Snapshot, constants: &BTreeMap<String, f64>) -> Result<(Graph, BTreeMap<String, Var>, Var, Option<Var>)> {
        self.check_snapshot(s)?;
        let mut g = Graph::new();
        let vars = g.bind(&self.params, false);
        let state = g.input(snapshot_tensor(s));
        let grid = s.grid();
        let cond = if self.config.constants.is_empty() {
            None
        } else {
            Some(g.input(self.constant_tensor(constants, grid.height, grid.width)?))
        };
        Ok((g, vars, state, cond))
    }

    /// Time derivatives `(F_u, F_x)` as fields.
    pub fn differentiate(&self, s: &Snapshot, constants: &BTreeMap<String, f64>) -> Result<(Vec<Field>, Vec<Field>)> {
        let (mut g, vars, state, cond) = self.inference_graph(s, constants)?;
        let f = self.f_graph(&mut g, &vars, state, cond, s.grid().dx)?;
        let mut fields = tensor_fields(g.value(f), s)?;
        let fx = fields.split_off(2);
        Ok((fields, fx))
    }

    /// One hybrid step `s + Ψ (+ S)`, advancing time by `dt`.
    pub fn integrate_step(&self, s: &Snapshot, constants: &BTreeMap<String, f64>, spec: &IntegratorSpec) -> Result<Snapshot> {
        let (mut g, vars, state, cond) = self.inference_graph(s, constants)?;
        let next = self.step_graph(&mut g, &vars, state, cond, s.grid().dx, spec)?;
        tensor_snapshot(g.value(next), s, s.t + spec.dt)
    }

    /// Autoregressive prediction of `n_steps` snapshots after `initial`.
    pub fn rollout(&self, initial: &Snapshot, constants: &BTreeMap<String, f64>, n_steps: usize, spec: &IntegratorSpec) -> Result<Trajectory> {
        self.check_snapshot(initial)?;
        let mut snaps = Vec::with_capacity(n_steps + 1);
        snaps.push(initial.clone());
        for k in 1..=n_steps {
            let next = match self.integrate_step(&snaps[k - 1], constants, spec) {
                Ok(s) => s,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::NonFinite {
                        context: format!("rollout step {k}"),
                    })
                }
                Err(e) => return Err(e),
            };
            snaps.push(next.with_time(Trajectory::time_at(initial.t, spec.dt, k)));
        }
        Trajectory::new(snaps, spec.dt)
    }
}

/// Stacks every channel of a snapshot into a `[C, H, W]` tensor.
pub fn snapshot_tensor(s: &Snapshot) -> Tensor {
    let g = s.grid();
    let data: Vec<f64> = s.channels().flat_map(|f| f.values().iter().copied()).collect();
    Tensor::new(vec![s.n_channels(), g.height, g.width], data).expect("snapshot layout")
}

fn tensor_fields(t: &Tensor, template: &Snapshot) -> Result<Vec<Field>> {
    let grid = *template.grid();
    let n = grid.len();
    if t.len() != n * template.n_channels() {
        return Err(Error::Shape("tensor does not match the snapshot layout".into()));
    }
    template
        .channels()
        .enumerate()
        .map(|(c, f)| Field::new(grid, t.data()[c * n..(c + 1) * n].to_vec(), f.units()))
        .collect()
}

/// Inverse of [`snapshot_tensor`], reusing the template's names and units.
pub fn tensor_snapshot(t: &Tensor, template: &Snapshot, time: f64) -> Result<Snapshot> {
    let fields = tensor_fields(t, template)?;
    Snapshot::from_channels(time, fields, template.channel_names().to_vec())
}
