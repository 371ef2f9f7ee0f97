use std::collections::BTreeMap;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Entries whose gradients are both below this magnitude are compared in
/// absolute rather than relative terms.
const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_grad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

fn loss_value<F>(forward: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = g.bind(params, false);
    let l = forward(&mut g, &vars)?;
    Ok(g.value(l).data()[0])
}

/// Compares reverse-mode gradients against central differences with step `h`
/// for every element of every parameter block.
pub fn grad_check<F>(forward: F, params: &ParamStore, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = g.bind(params, true);
    let loss = forward(&mut g, &vars)?;
    let analytic = g.backward(loss)?;

    let mut blocks = Vec::new();
    let mut probe = params.clone();
    for (name, tensor) in params {
        let mut block = BlockReport {
            name: name.clone(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_grad: 0.0,
        };
        for i in 0..tensor.len() {
            let x0 = tensor.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = x0 + h;
            let up = loss_value(&forward, &probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = x0 - h;
            let down = loss_value(&forward, &probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = x0;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.param(name).map_or(0.0, |t| t.data()[i]);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            block.max_abs_error = block.max_abs_error.max(abs);
            block.max_rel_error = block.max_rel_error.max(rel);
            block.max_grad = block.max_grad.max(a.abs());
        }
        blocks.push(block);
    }
    Ok(GradCheckReport { blocks, tolerance })
}
