//! Random instances of the on-disk formats, shared by the test targets.
#![allow(dead_code)]

use proptest::prelude::*;

use parc_core::autodiff::{Activation, AdamState, Tensor};
use parc_core::dataset::{ChannelStats, Split};
use parc_core::fields::{Field, GridSpec, Snapshot, Trajectory};
use parc_core::io::checkpoint::Checkpoint;
use parc_core::io::manifest::{DatasetManifest, ManifestEntry};
use parc_core::model::{ConstantInput, Model, ModelConfig, Normalization, StackConfig};

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1.0..1.0f64, Just(0.0), Just(-0.0)]
}

prop_compose! {
    pub fn trajectory()(h in 4usize..9, w in 4usize..9, c in 2usize..5, t in 1usize..4)
        (values in prop::collection::vec(finite(), h * w * c * t), h in Just(h), w in Just(w), c in Just(c), t in Just(t),
         dx in 1e-3..10.0f64, dt in 1e-3..1.0f64, t0 in -5.0..5.0f64) -> Trajectory {
        let g = GridSpec::new(h, w, dx).unwrap();
        let names: Vec<String> = (0..c).map(|i| format!("ch{i}")).collect();
        let snaps = (0..t)
            .map(|k| {
                let fields = (0..c)
                    .map(|ci| {
                        let off = (k * c + ci) * h * w;
                        Field::new(g, values[off..off + h * w].to_vec(), "").unwrap()
                    })
                    .collect();
                Snapshot::from_channels(Trajectory::time_at(t0, dt, k), fields, names.clone()).unwrap()
            })
            .collect();
        Trajectory::new(snaps, dt).unwrap()
    }
}

pub fn name() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9_]{0,6}"
}

pub fn split() -> impl Strategy<Value = Split> {
    prop_oneof![Just(Split::Train), Just(Split::Validation), Just(Split::Test)]
}

prop_compose! {
    pub fn manifest()(channels in prop::collection::btree_set(name(), 2..5),
                  entries in prop::collection::vec((split(), prop::collection::btree_map(name(), finite(), 0..4)), 1..6),
                  stats in prop::collection::vec([finite(), finite(), finite(), finite()], 5)) -> DatasetManifest {
        let channels: Vec<String> = channels.into_iter().collect();
        let stats = channels
            .iter()
            .zip(stats)
            .map(|(_, [min, max, mean, std])| ChannelStats { min, max, mean, std })
            .collect();
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, (split, constants))| ManifestEntry { file: format!("traj_{i:04}.parcfld"), split, constants })
            .collect();
        DatasetManifest { channels, stats, entries }
    }
}

pub fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Relu)]
}

prop_compose! {
    pub fn stack()(layers in 1usize..3, hidden in 1usize..4, kernel in prop_oneof![Just(1usize), Just(3)], activation in activation()) -> StackConfig {
        StackConfig { layers, hidden, kernel, activation }
    }
}

prop_compose! {
    pub fn model_config()(state in 0usize..3, static_first in any::<bool>(), reaction in stack(), correction in stack(),
                      constants in prop::collection::vec((name(), any::<bool>()), 0..3),
                      diff_mom in any::<bool>(), adv_state in any::<bool>(), diffusivity in 0.0..2.0f64, learn in any::<bool>()) -> ModelConfig {
        let state_channels: Vec<String> = (0..state).map(|i| format!("s{i}")).collect();
        let static_channels = if static_first && state > 1 { vec![state_channels[0].clone()] } else { Vec::new() };
        let mut seen = std::collections::BTreeSet::new();
        let constants = constants
            .into_iter()
            .filter(|(n, _)| seen.insert(n.clone()))
            .map(|(name, inverse)| ConstantInput { name, inverse })
            .collect();
        ModelConfig {
            state_channels,
            static_channels,
            constants,
            reaction,
            correction,
            include_diffusion_in_momentum: diff_mom,
            include_advection_of_state: adv_state,
            diffusivity,
            learn_diffusivity: learn,
        }
    }
}

prop_compose! {
    pub fn checkpoint()(cfg in model_config(), init_seed in any::<u64>(), seed in any::<u64>(), with_opt in any::<bool>(),
                    norm in prop::collection::vec(0.1..10.0f64, 16), step in 0u64..10_000, lr in 1e-6..1e-2f64) -> Checkpoint {
        let c = cfg.n_channels();
        let k = cfg.constants.len();
        let mut n = Normalization::identity(c, k);
        for i in 0..c {
            n.center[i] = norm[i] - 5.0;
            n.half_range[i] = norm[i + 4];
            n.rate_scale[i] = norm[i + 8];
        }
        for i in 0..k {
            n.const_center[i] = norm[12 + i];
            n.const_half_range[i] = norm[12 + i] * 0.5;
        }
        let model = Model::init(cfg, n, init_seed).unwrap();
        let optimizer = with_opt.then(|| {
            let mut a = AdamState::new(lr);
            a.step = step;
            for (name, t) in model.params.iter().take(3) {
                a.m.insert(name.clone(), Tensor::filled(t.shape(), lr * 3.0));
                a.v.insert(name.clone(), Tensor::filled(t.shape(), lr * lr));
            }
            a
        });
        Checkpoint::stage1(model, seed, optimizer)
    }
}
