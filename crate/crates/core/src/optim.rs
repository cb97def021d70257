//! Adam with bias correction, owning moment buffers for every parameter table.

use crate::error::{Error, Result};

/// Anything exposing named, flat parameter tables in a fixed order.
pub trait ParamTables {
    fn tables(&self) -> Vec<(String, &[f64])>;
    fn tables_mut(&mut self) -> Vec<(String, &mut [f64])>;
}

impl ParamTables for crate::layer::LayerParams {
    fn tables(&self) -> Vec<(String, &[f64])> {
        crate::layer::LayerParams::tables(self)
    }
    fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        crate::layer::LayerParams::tables_mut(self)
    }
}

impl ParamTables for crate::head::Head {
    fn tables(&self) -> Vec<(String, &[f64])> {
        crate::head::Head::tables(self)
    }
    fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        crate::head::Head::tables_mut(self)
    }
}

impl ParamTables for crate::layer::GradientSet {
    fn tables(&self) -> Vec<(String, &[f64])> {
        crate::layer::GradientSet::tables(self)
    }
    fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        crate::layer::GradientSet::tables_mut(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<P: ParamTables + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tables().iter().map(|(_, t)| t.len()).collect();
        AdamState {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update of `params` from `grads`.
///
/// Nothing is modified when a gradient table is non-finite or shaped wrongly.
pub fn adam_step<P, G>(state: &mut AdamState, params: &mut P, grads: &G) -> Result<()>
where
    P: ParamTables + ?Sized,
    G: ParamTables + ?Sized,
{
    let grad_tables = grads.tables();
    let mut param_tables = params.tables_mut();
    if grad_tables.len() != param_tables.len() || state.m.len() != param_tables.len() {
        return Err(Error::shape(
            "adam_step tables",
            param_tables.len(),
            format!("grads {} / state {}", grad_tables.len(), state.m.len()),
        ));
    }
    for (k, ((pname, p), (gname, g))) in param_tables.iter().zip(&grad_tables).enumerate() {
        if p.len() != g.len() || pname != gname || state.m[k].len() != p.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{pname}[{}]", p.len()),
                format!("{gname}[{}]", g.len()),
            ));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} in table {gname} at index {i}",
                g[i]
            )));
        }
    }

    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (k, ((_, p), (_, g))) in param_tables.iter_mut().zip(&grad_tables).enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
