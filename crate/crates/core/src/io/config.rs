//! Flat `key=value` configuration with dotted namespaces.
//!
//! Every key has a registered default; unknown keys are rejected with the
//! list of valid ones. Resolved configs are written with every key, so a run
//! directory alone is enough to repeat a run.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use super::binary::{read_file, write_file};
use crate::autodiff::Activation;
use crate::dataset::Split;
use crate::dns::{BurgersConfig, SweepParams};
use crate::error::{Error, Result};
use crate::fields::GridSpec;
use crate::model::{ConstantInput, ModelConfig, StackConfig};
use crate::training::{Stage, TrainConfig};

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn k(key: &'static str, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { key, default, doc }
}

pub const KEYS: &[KeySpec] = &[
    k("dns.cells", "64", "cells per side of the square Burgers domain"),
    k("dns.length", "6.0", "side length of the domain (cm)"),
    k("dns.dt", "0.02", "output interval (s)"),
    k("dns.steps", "100", "output intervals per trajectory"),
    k("dns.substeps", "15", "backward-Euler substeps per output interval"),
    k("dns.advection", "true", "include the nonlinear advection term"),
    k("sweep.r", "1000,2500,5000,7500,10000", "Reynolds numbers"),
    k("sweep.a", "0.5,0.6,0.7,0.8,0.9", "initial-condition amplitudes"),
    k("sweep.w", "0.7,0.8,0.9,1.0", "initial-condition widths"),
    k("sweep.split", "train", "split tag for generated trajectories"),
    k("mms.cells", "32", "cells per side of the manufactured-solution grid"),
    k("mms.length", "6.0", "domain side length"),
    k("mms.dt", "0.02", "output interval"),
    k("mms.steps", "50", "output intervals"),
    k("mms.amplitude", "1.0", "amplitude of the uniformly decaying velocity"),
    k("mms.diffusivity", "0.0", "diffusivity used for the recorded forcing"),
    k("taylor_green.cells", "128", "cells per side of the periodic grid"),
    k("taylor_green.nu", "0.01", "kinematic viscosity"),
    k("taylor_green.rho", "1.0", "density"),
    k("taylor_green.dt", "0.05", "output interval"),
    k("taylor_green.steps", "20", "output intervals"),
    k("model.state_channels", "", "non-velocity channels, in snapshot order"),
    k("model.static_channels", "", "state channels without their own dynamics"),
    k("model.constants", "1/R", "PDE constants fed to the reaction nets (prefix 1/ to invert)"),
    k("model.reaction.layers", "4", "reaction stack depth"),
    k("model.reaction.channels", "48", "reaction stack hidden width"),
    k("model.reaction.kernel", "3", "reaction kernel size"),
    k("model.reaction.activation", "tanh", "reaction activation (tanh, relu)"),
    k("model.correction.layers", "3", "correction stack depth"),
    k("model.correction.channels", "32", "correction stack hidden width"),
    k("model.correction.kernel", "3", "correction kernel size"),
    k("model.correction.activation", "tanh", "correction activation (tanh, relu)"),
    k("model.include_diffusion_in_momentum", "false", "add a learned k_u Δu to F_u"),
    k("model.include_advection_of_state", "true", "advect static channels"),
    k("model.diffusivity", "0.0", "initial diffusivity"),
    k("model.learn_diffusivity", "true", "train the diffusivities"),
    k("model.seed", "0", "parameter initialization seed"),
    k("train.stage", "1", "1 = differentiator, 2 = correction"),
    k("train.epochs", "500", "maximum epochs"),
    k("train.lr", "1e-4", "initial learning rate"),
    k("train.lr_halving_epochs", "100", "halve the learning rate every this many epochs"),
    k("train.lr_min", "1e-6", "learning-rate floor"),
    k("train.patience", "50", "early-stopping patience in epochs (0 disables)"),
    k("train.batch_size", "8", "snapshot pairs per mini-batch"),
    k("train.seed", "0", "shuffling seed"),
    k("train.scheme", "heun", "numerical integrator (heun, rk4)"),
    k("train.threads", "0", "worker threads (0 = PARC_THREADS or all cores)"),
    k("train.validation", "", "dataset entry indices moved to the validation split"),
    k("train.target_loss", "", "stop once the epoch training loss reaches this value"),
    k("rollout.steps", "0", "prediction steps (0 = length of the reference trajectory)"),
    k("rollout.correction", "true", "apply the learned correction"),
    k("rollout.split", "test", "dataset split to roll out"),
    k("eval.exclude_ring", "true", "drop the outermost cell ring from residual metrics"),
    k("eval.hotspot_channel", "", "temperature channel for hotspot metrics (empty = none)"),
    k("eval.hotspot_threshold", "875", "hotspot temperature threshold (K)"),
    k("eval.rho", "1.0", "density for the Navier-Stokes residual"),
    k("eval.re", "", "Reynolds number for the Navier-Stokes residual (empty = skip)"),
    k("report.frames", "0,-1", "snapshot indices to render (negative counts from the end)"),
];

pub fn valid_keys() -> Vec<&'static str> {
    KEYS.iter().map(|k| k.key).collect()
}

fn unknown_key(key: &str) -> Error {
    Error::Validation(format!("unknown config key {key:?}; valid keys: {}", valid_keys().join(", ")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.key.to_string(), k.default.to_string())).collect(),
        }
    }
}

impl Config {
    /// Defaults overridden by the `key=value` lines of `text`. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
            c.set(key.trim(), value.trim())?;
        }
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Validation(format!("config {path:?} is not UTF-8")))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(unknown_key(key)),
        }
    }

    /// Applies `key=value` overrides, e.g. from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, items: &[S]) -> Result<()> {
        for item in items {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("override {item:?} is not key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Every key in registry order.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{}={}\n", k.key, self.values[k.key])).collect()
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values.get(key).map(String::as_str).ok_or_else(|| unknown_key(key))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Validation(format!("config key {key}: cannot parse {v:?}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parsed(key)?;
        if !v.is_finite() {
            return Err(Error::Validation(format!("config key {key} must be finite")));
        }
        Ok(v)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        if self.get(key)?.is_empty() {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key)
    }

    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        Ok(split_list(self.get(key)?))
    }

    pub fn list_parsed<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.list(key)?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Validation(format!("config key {key}: cannot parse {s:?}"))))
            .collect()
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn stack(c: &Config, prefix: &str) -> Result<StackConfig> {
    Ok(StackConfig {
        layers: c.usize(&format!("{prefix}.layers"))?,
        hidden: c.usize(&format!("{prefix}.channels"))?,
        kernel: c.usize(&format!("{prefix}.kernel"))?,
        activation: Activation::parse(c.get(&format!("{prefix}.activation"))?)?,
    })
}

pub fn model_config(c: &Config) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        state_channels: c.list("model.state_channels")?,
        static_channels: c.list("model.static_channels")?,
        constants: c.list_parsed::<ConstantInput>("model.constants")?,
        reaction: stack(c, "model.reaction")?,
        correction: stack(c, "model.correction")?,
        include_diffusion_in_momentum: c.bool("model.include_diffusion_in_momentum")?,
        include_advection_of_state: c.bool("model.include_advection_of_state")?,
        diffusivity: c.f64("model.diffusivity")?,
        learn_diffusivity: c.bool("model.learn_diffusivity")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// The `model.*` lines describing `cfg`, in registry order. This is the
/// text hashed into checkpoints.
pub fn model_config_text(cfg: &ModelConfig) -> String {
    let mut c = Config::default();
    let mut set = |k: &str, v: String| c.set(k, &v).expect("registered key");
    set("model.state_channels", cfg.state_channels.join(","));
    set("model.static_channels", cfg.static_channels.join(","));
    set("model.constants", cfg.constants.iter().map(|x| x.label()).collect::<Vec<_>>().join(","));
    for (p, s) in [("model.reaction", &cfg.reaction), ("model.correction", &cfg.correction)] {
        set(&format!("{p}.layers"), s.layers.to_string());
        set(&format!("{p}.channels"), s.hidden.to_string());
        set(&format!("{p}.kernel"), s.kernel.to_string());
        set(&format!("{p}.activation"), s.activation.name().to_string());
    }
    set("model.include_diffusion_in_momentum", cfg.include_diffusion_in_momentum.to_string());
    set("model.include_advection_of_state", cfg.include_advection_of_state.to_string());
    set("model.diffusivity", format!("{:e}", cfg.diffusivity));
    set("model.learn_diffusivity", cfg.learn_diffusivity.to_string());
    c.to_text()
        .lines()
        .filter(|l| l.starts_with("model.") && !l.starts_with("model.seed="))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn model_config_from_text(text: &str) -> Result<ModelConfig> {
    model_config(&Config::parse(text)?)
}

pub fn stage(c: &Config) -> Result<Stage> {
    match c.get("train.stage")? {
        "1" => Ok(Stage::Differentiator),
        "2" => Ok(Stage::Correction),
        s => Err(Error::Validation(format!("train.stage must be 1 or 2, got {s:?}"))),
    }
}

pub fn train_config(c: &Config) -> Result<TrainConfig> {
    let threads = c.usize("train.threads")?;
    let cfg = TrainConfig {
        epochs: c.usize("train.epochs")?,
        learning_rate: c.f64("train.lr")?,
        halving_epochs: c.usize("train.lr_halving_epochs")?,
        min_learning_rate: c.f64("train.lr_min")?,
        patience: c.usize("train.patience")?,
        batch_size: c.usize("train.batch_size")?,
        seed: c.parsed("train.seed")?,
        scheme: c.parsed("train.scheme")?,
        threads: (threads > 0).then_some(threads),
        target_loss: c.opt_f64("train.target_loss")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn burgers_config(c: &Config) -> Result<BurgersConfig> {
    let cfg = BurgersConfig {
        grid: GridSpec::centered_square(c.usize("dns.cells")?, c.f64("dns.length")?)?,
        dt_out: c.f64("dns.dt")?,
        steps_out: c.usize("dns.steps")?,
        substeps: c.usize("dns.substeps")?,
        advection: c.bool("dns.advection")?,
        ..BurgersConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn sweep_params(c: &Config) -> Result<SweepParams> {
    Ok(SweepParams {
        r: c.list_parsed("sweep.r")?,
        a: c.list_parsed("sweep.a")?,
        w: c.list_parsed("sweep.w")?,
    })
}

pub fn sweep_split(c: &Config) -> Result<Split> {
    c.parsed("sweep.split")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = Config::default();
        let m = model_config(&c).unwrap();
        assert_eq!(m, ModelConfig::default());
        let t = train_config(&c).unwrap();
        assert_eq!(t, TrainConfig::default());
        assert_eq!(stage(&c).unwrap(), Stage::Differentiator);
        let b = burgers_config(&c).unwrap();
        assert_eq!(b, BurgersConfig::default());
        assert_eq!(sweep_params(&c).unwrap(), SweepParams::table3(Split::Train));
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = Config::parse("model.reaction.width=3").unwrap_err();
        let msg = err.to_string();
        assert!(err.is_validation());
        assert!(msg.contains("model.reaction.channels") && msg.contains("train.lr"));
    }

    #[test]
    fn parse_overrides_and_text_round_trip() {
        let mut c = Config::parse("# comment\n\ntrain.lr = 1e-3\nmodel.state_channels=T,mu\n").unwrap();
        c.apply_overrides(&["train.epochs=7"]).unwrap();
        assert_eq!(c.f64("train.lr").unwrap(), 1e-3);
        assert_eq!(c.usize("train.epochs").unwrap(), 7);
        assert_eq!(c.list("model.state_channels").unwrap(), vec!["T", "mu"]);
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        assert!(Config::parse("train.lr").is_err());
        assert!(c.clone().apply_overrides(&["nokey"]).is_err());
        assert!(Config::parse("train.epochs=-1").and_then(|c| train_config(&c)).is_err());
    }

    #[test]
    fn model_text_round_trip() {
        let mut m = ModelConfig::default();
        m.state_channels = vec!["T".into(), "mu".into()];
        m.static_channels = vec!["mu".into()];
        m.diffusivity = 0.1;
        m.reaction.hidden = 16;
        let text = model_config_text(&m);
        assert!(text.lines().all(|l| l.starts_with("model.")));
        assert_eq!(model_config_from_text(&text).unwrap(), m);
    }
}
