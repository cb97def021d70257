//! An independent gradient engine for checking the hand-written backward pass.
//!
//! The whole unrolled sequence is recorded as a graph of vector operations,
//! each node storing its value and, for elementwise nonlinearities, its local
//! derivative. Reverse accumulation then walks the nodes in reverse creation
//! order. Spike nodes differentiate through the Gaussian surrogate and
//! cell-threshold nodes through γ, so "correct" here means the surrogate
//! chain rule rather than the almost-everywhere-zero true derivative.

use crate::error::{Error, Result};
use crate::head::{cross_entropy, head_backward, softmax, Head, HeadKind, PROB_FLOOR};
use crate::layer::{Gate, GradientSet, LayerParams, LayerState};
use crate::model::{sequence_loss, Network, Readout, Targets};
use crate::numerics::{Matrix, RngStream, Vector};
use crate::spike::{cell_threshold_grad, surrogate_deriv, SurrogateConfig};

/// Largest instance [`reference_gradient`] accepts.
pub const MAX_REFERENCE_PARAMS: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// A vector leaf; named leaves receive gradients.
    Leaf(Option<String>),
    /// Product of matrix leaf `mat` with the single input.
    MatVec { mat: usize },
    Add,
    Hadamard,
    Spike { theta: f64, alpha: f64 },
    CellThreshold,
    Softmax,
    /// `-ln max(p[label], floor)`, a 1-vector.
    CrossEntropy { label: usize },
    /// `½‖y − target‖²`, a 1-vector.
    HalfSquaredError { target: Vector },
    /// Sum of 1-vector inputs.
    Sum,
}

#[derive(Clone, Debug)]
pub struct GraphNode {
    pub op: OpKind,
    pub inputs: Vec<usize>,
    pub value: Vector,
    /// Elementwise local derivative (spike and threshold nodes only).
    pub local: Vector,
    pub grad: Vector,
}

#[derive(Clone, Debug)]
pub struct MatLeaf {
    pub name: Option<String>,
    pub value: Matrix,
    pub grad: Matrix,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub nodes: Vec<GraphNode>,
    pub mats: Vec<MatLeaf>,
}

impl Graph {
    fn push(&mut self, op: OpKind, inputs: Vec<usize>, value: Vector, local: Vector) -> usize {
        let n = value.len();
        self.nodes.push(GraphNode {
            op,
            inputs,
            value,
            local,
            grad: vec![0.0; n],
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: usize) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn leaf(&mut self, name: Option<&str>, value: Vector) -> usize {
        self.push(OpKind::Leaf(name.map(str::to_owned)), vec![], value, vec![])
    }

    pub fn matrix(&mut self, name: Option<&str>, value: Matrix) -> usize {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.mats.push(MatLeaf {
            name: name.map(str::to_owned),
            value,
            grad,
        });
        self.mats.len() - 1
    }

    pub fn matvec(&mut self, mat: usize, x: usize) -> Result<usize> {
        let w = &self.mats[mat].value;
        let xv = &self.nodes[x].value;
        if w.cols() != xv.len() {
            return Err(Error::shape("graph matvec", w.shape_str(), xv.len()));
        }
        let value = (0..w.rows())
            .map(|r| w.row(r).iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(OpKind::MatVec { mat }, vec![x], value, vec![]))
    }

    fn binary(&mut self, op: OpKind, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Result<usize> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.len() != bv.len() {
            return Err(Error::shape("graph elementwise", av.len(), bv.len()));
        }
        let value = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(op, vec![a, b], value, vec![]))
    }

    pub fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        self.binary(OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn hadamard(&mut self, a: usize, b: usize) -> Result<usize> {
        self.binary(OpKind::Hadamard, a, b, |x, y| x * y)
    }

    pub fn spike(&mut self, u: usize, theta: f64, alpha: f64) -> Result<usize> {
        let uv = self.nodes[u].value.clone();
        let value = uv.iter().map(|&x| if x > theta { 1.0 } else { 0.0 }).collect();
        let local = uv
            .iter()
            .map(|&x| surrogate_deriv(x, theta, alpha))
            .collect::<Result<Vector>>()?;
        Ok(self.push(OpKind::Spike { theta, alpha }, vec![u], value, local))
    }

    pub fn cell_threshold(&mut self, v: usize, cfg: &SurrogateConfig) -> Result<usize> {
        let vv = self.nodes[v].value.clone();
        let mut value = Vec::with_capacity(vv.len());
        let mut local = Vec::with_capacity(vv.len());
        for &x in &vv {
            if x != 0.0 && x != 1.0 && x != 2.0 {
                return Err(Error::Invariant(format!("cell pre-value {x} outside {{0,1,2}}")));
            }
            value.push(x.min(1.0));
            local.push(cell_threshold_grad(x as u8, cfg)?);
        }
        Ok(self.push(OpKind::CellThreshold, vec![v], value, local))
    }

    pub fn softmax(&mut self, z: usize) -> usize {
        let value = softmax(&self.nodes[z].value);
        self.push(OpKind::Softmax, vec![z], value, vec![])
    }

    pub fn cross_entropy(&mut self, p: usize, label: usize) -> Result<usize> {
        let pv = &self.nodes[p].value;
        if label >= pv.len() {
            return Err(Error::Index {
                index: label,
                len: pv.len(),
            });
        }
        let value = vec![cross_entropy(pv, label)];
        Ok(self.push(OpKind::CrossEntropy { label }, vec![p], value, vec![]))
    }

    pub fn half_squared_error(&mut self, y: usize, target: &[f64]) -> Result<usize> {
        let yv = &self.nodes[y].value;
        if yv.len() != target.len() {
            return Err(Error::shape("graph squared error", yv.len(), target.len()));
        }
        let value = vec![0.5 * yv.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()];
        let op = OpKind::HalfSquaredError {
            target: target.to_vec(),
        };
        Ok(self.push(op, vec![y], value, vec![]))
    }

    pub fn sum(&mut self, terms: &[usize]) -> usize {
        let value = vec![terms.iter().map(|&t| self.nodes[t].value[0]).sum()];
        self.push(OpKind::Sum, terms.to_vec(), value, vec![])
    }

    /// Reverse accumulation from the scalar node `root`.
    pub fn backward(&mut self, root: usize) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        for m in &mut self.mats {
            m.grad.fill(0.0);
        }
        self.nodes[root].grad[0] = 1.0;
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = node.grad.clone();
            let inputs = node.inputs.clone();
            match node.op.clone() {
                OpKind::Leaf(_) => {}
                OpKind::MatVec { mat } => {
                    let x = self.nodes[inputs[0]].value.clone();
                    let leaf = &mut self.mats[mat];
                    let mut dx = vec![0.0; x.len()];
                    for (r, &gr) in g.iter().enumerate() {
                        for (c, &xc) in x.iter().enumerate() {
                            let v = leaf.grad.get(r, c) + gr * xc;
                            leaf.grad.set(r, c, v);
                            dx[c] += leaf.value.get(r, c) * gr;
                        }
                    }
                    self.add_grad(inputs[0], &dx);
                }
                OpKind::Add => {
                    self.add_grad(inputs[0], &g);
                    self.add_grad(inputs[1], &g);
                }
                OpKind::Hadamard => {
                    let (a, b) = (self.nodes[inputs[0]].value.clone(), self.nodes[inputs[1]].value.clone());
                    let da: Vector = g.iter().zip(&b).map(|(x, y)| x * y).collect();
                    let db: Vector = g.iter().zip(&a).map(|(x, y)| x * y).collect();
                    self.add_grad(inputs[0], &da);
                    self.add_grad(inputs[1], &db);
                }
                OpKind::Spike { .. } | OpKind::CellThreshold => {
                    let d: Vector = g.iter().zip(&self.nodes[id].local).map(|(x, y)| x * y).collect();
                    self.add_grad(inputs[0], &d);
                }
                OpKind::Softmax => {
                    let p = self.nodes[id].value.clone();
                    let pg: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
                    let d: Vector = p.iter().zip(&g).map(|(pi, gi)| pi * (gi - pg)).collect();
                    self.add_grad(inputs[0], &d);
                }
                OpKind::CrossEntropy { label } => {
                    let p = &self.nodes[inputs[0]].value;
                    let mut d = vec![0.0; p.len()];
                    if p[label] >= PROB_FLOOR {
                        d[label] = -g[0] / p[label];
                    }
                    self.add_grad(inputs[0], &d);
                }
                OpKind::HalfSquaredError { target } => {
                    let y = &self.nodes[inputs[0]].value;
                    let d: Vector = y.iter().zip(&target).map(|(a, b)| g[0] * (a - b)).collect();
                    self.add_grad(inputs[0], &d);
                }
                OpKind::Sum => {
                    for &i in &inputs {
                        self.add_grad(i, &g);
                    }
                }
            }
        }
    }

    fn add_grad(&mut self, id: usize, d: &[f64]) {
        for (a, b) in self.nodes[id].grad.iter_mut().zip(d) {
            *a += b;
        }
    }

    pub fn node_grad(&self, name: &str) -> Option<&[f64]> {
        self.nodes.iter().find_map(|n| match &n.op {
            OpKind::Leaf(Some(s)) if s == name => Some(n.grad.as_slice()),
            _ => None,
        })
    }

    pub fn mat_grad(&self, name: &str) -> Option<&Matrix> {
        self.mats
            .iter()
            .find(|m| m.name.as_deref() == Some(name))
            .map(|m| &m.grad)
    }
}

/// Records the full unrolled forward pass and loss of one sequence. Returns
/// the graph and the id of the loss node.
pub fn build_graph(
    net: &Network,
    cfg: &SurrogateConfig,
    inputs: &[&[f64]],
    initial: &LayerState,
    targets: Targets<'_>,
    readout: Readout<'_>,
) -> Result<(Graph, usize)> {
    if inputs.is_empty() {
        return Err(Error::Domain("empty input sequence".into()));
    }
    let steps = inputs.len();
    let mut g = Graph::default();
    let mut w_h = [0; 4];
    let mut w_x = [0; 4];
    let mut b_h = [0; 4];
    let mut b_x = [0; 4];
    for q in Gate::ALL {
        let p = net.layer.gate(q);
        let s = q.symbol();
        w_h[q.index()] = g.matrix(Some(&format!("w_{s}_h")), p.w_h.clone());
        w_x[q.index()] = g.matrix(Some(&format!("w_{s}_x")), p.w_x.clone());
        b_h[q.index()] = g.leaf(Some(&format!("b_{s}_h")), p.b_h.clone());
        b_x[q.index()] = g.leaf(Some(&format!("b_{s}_x")), p.b_x.clone());
    }
    let w_y = g.matrix(Some("w_y"), net.head.w_y.clone());
    let b_y = g.leaf(Some("b_y"), net.head.b_y.clone());
    let proj = match readout {
        Readout::Direct => None,
        Readout::Projected(e) => {
            let norms = (0..e.rows()).map(|r| -0.5 * e.row(r).iter().map(|v| v * v).sum::<f64>()).collect();
            Some((g.matrix(None, e.clone()), g.leaf(None, norms)))
        }
    };

    let mut h = g.leaf(Some("h0"), initial.h.clone());
    let mut c = g.leaf(Some("c0"), initial.c.clone());
    let mut losses = Vec::new();
    for (t, x) in inputs.iter().enumerate() {
        let x = g.leaf(None, x.to_vec());
        let mut gate = [0; 4];
        for q in Gate::ALL {
            let k = q.index();
            let wh = g.matvec(w_h[k], h)?;
            let wx = g.matvec(w_x[k], x)?;
            let a = g.add(wh, wx)?;
            let a = g.add(a, b_h[k])?;
            let a = g.add(a, b_x[k])?;
            gate[k] = if q.uses_sigma2() {
                g.spike(a, cfg.theta2, cfg.alpha2)?
            } else {
                g.spike(a, cfg.theta1, cfg.alpha1)?
            };
        }
        let [f, i, gg, o] = gate;
        let keep = g.hadamard(f, c)?;
        let write = g.hadamard(i, gg)?;
        let c_pre = g.add(keep, write)?;
        c = g.cell_threshold(c_pre, cfg)?;
        h = g.hadamard(o, c)?;

        let scored = match targets {
            Targets::FinalClass(label) => (t + 1 == steps).then_some(Ok(label)),
            Targets::EveryClass(labels) => Some(Ok(*labels
                .get(t)
                .ok_or_else(|| Error::shape("class targets", steps, labels.len()))?)),
            Targets::EveryValue(values) => Some(Err(values
                .get(t)
                .ok_or_else(|| Error::shape("value targets", steps, values.len()))?)),
        };
        let Some(target) = scored else { continue };
        let z = g.matvec(w_y, h)?;
        let y = g.add(z, b_y)?;
        let loss = match (target, net.head.kind, proj) {
            (Ok(label), HeadKind::Softmax, None) => {
                let p = g.softmax(y);
                g.cross_entropy(p, label)?
            }
            (Ok(label), HeadKind::Linear, Some((e, norms))) => {
                let s = g.matvec(e, y)?;
                let s = g.add(s, norms)?;
                let p = g.softmax(s);
                g.cross_entropy(p, label)?
            }
            (Err(value), HeadKind::Linear, None) => g.half_squared_error(y, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "targets {targets:?} are incompatible with a {:?} head and {readout:?} readout",
                    net.head.kind
                )))
            }
        };
        losses.push(loss);
    }
    let root = g.sum(&losses);
    Ok((g, root))
}

/// Gradient of the summed sequence loss by reverse accumulation over the
/// recorded graph, in [`GradientSet`] layout.
pub fn reference_gradient(
    net: &Network,
    cfg: &SurrogateConfig,
    inputs: &[&[f64]],
    targets: Targets<'_>,
    readout: Readout<'_>,
) -> Result<GradientSet> {
    let n = net.parameter_count();
    if n > MAX_REFERENCE_PARAMS {
        return Err(Error::Domain(format!(
            "reference gradient limited to {MAX_REFERENCE_PARAMS} parameters, instance has {n}"
        )));
    }
    let initial = LayerState::zeros(net.hidden_size());
    let (mut g, root) = build_graph(net, cfg, inputs, &initial, targets, readout)?;
    g.backward(root);

    let missing = |name: &str| Error::Invariant(format!("graph has no leaf {name}"));
    let mat = |name: String| g.mat_grad(&name).cloned().ok_or_else(|| missing(&name));
    let vec = |name: String| g.node_grad(&name).map(<[f64]>::to_vec).ok_or_else(|| missing(&name));
    let mut out = net.zero_grads();
    for q in Gate::ALL {
        let s = q.symbol();
        let dst = out.layer.gate_mut(q);
        dst.w_h = mat(format!("w_{s}_h"))?;
        dst.w_x = mat(format!("w_{s}_x"))?;
        dst.b_h = vec(format!("b_{s}_h"))?;
        dst.b_x = vec(format!("b_{s}_x"))?;
    }
    out.head = Some(Head {
        kind: net.head.kind,
        w_y: mat("w_y".into())?,
        b_y: vec("b_y".into())?,
    });
    out.dh0 = vec("h0".into())?;
    out.dc0 = vec("c0".into())?;
    Ok(out)
}

/// Gradient of the same loss from the hand-written backward pass.
pub fn implementation_gradient(
    net: &Network,
    cfg: &SurrogateConfig,
    inputs: &[&[f64]],
    targets: Targets<'_>,
    readout: Readout<'_>,
) -> Result<GradientSet> {
    let mut grads = net.zero_grads();
    sequence_loss(
        net,
        cfg,
        inputs,
        &LayerState::zeros(net.hidden_size()),
        targets,
        readout,
        Some((&mut grads, 1.0)),
    )?;
    Ok(grads)
}

/// Discrepancy in one table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableError {
    pub table: String,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Flat index of the worst relative error.
    pub index: usize,
}

/// Per-table errors, worst relative error first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientReport {
    pub tables: Vec<TableError>,
}

impl GradientReport {
    pub fn max_abs(&self) -> f64 {
        self.tables.iter().map(|t| t.max_abs).fold(0.0, f64::max)
    }

    pub fn max_rel(&self) -> f64 {
        self.tables.iter().map(|t| t.max_rel).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TableError> {
        self.tables.first()
    }
}

/// Relative error with denominator `max(|a|, |b|, 1e-12)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn all_tables(g: &GradientSet) -> Vec<(String, &[f64])> {
    let mut t = g.tables();
    t.push(("dh0".into(), &g.dh0));
    t.push(("dc0".into(), &g.dc0));
    t
}

pub fn compare_gradients(a: &GradientSet, b: &GradientSet) -> Result<GradientReport> {
    let (ta, tb) = (all_tables(a), all_tables(b));
    if ta.len() != tb.len() {
        return Err(Error::shape("compare_gradients", ta.len(), tb.len()));
    }
    let mut tables = Vec::with_capacity(ta.len());
    for ((na, va), (nb, vb)) in ta.iter().zip(&tb) {
        if na != nb || va.len() != vb.len() {
            return Err(Error::shape(
                "compare_gradients",
                format!("{na}[{}]", va.len()),
                format!("{nb}[{}]", vb.len()),
            ));
        }
        let mut e = TableError {
            table: na.clone(),
            max_abs: 0.0,
            max_rel: 0.0,
            index: 0,
        };
        for (k, (&x, &y)) in va.iter().zip(vb.iter()).enumerate() {
            let r = rel_err(x, y);
            e.max_abs = e.max_abs.max((x - y).abs());
            if r > e.max_rel || r.is_nan() {
                e.max_rel = if r.is_nan() { f64::INFINITY } else { r };
                e.index = k;
            }
        }
        tables.push(e);
    }
    tables.sort_by(|x, y| {
        y.max_rel
            .total_cmp(&x.max_rel)
            .then(y.max_abs.total_cmp(&x.max_abs))
    });
    Ok(GradientReport { tables })
}

/// Loss of a head applied to a fixed hidden sequence.
fn head_loss(head: &Head, hidden: &[Vector], targets: &HeadTargets) -> Result<f64> {
    let mut loss = 0.0;
    for (t, h) in hidden.iter().enumerate() {
        let y = head.forward(h)?;
        loss += match targets {
            HeadTargets::Classes(labels) => cross_entropy(&y, labels[t]),
            HeadTargets::Values(values) => {
                0.5 * y.iter().zip(&values[t]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
        };
    }
    Ok(loss)
}

/// Supervision for a head check: one target per hidden vector.
#[derive(Clone, Debug)]
pub enum HeadTargets {
    Classes(Vec<usize>),
    Values(Vec<Vector>),
}

/// Central differences on every head parameter against the analytic head
/// gradient, with the hidden sequence held fixed. Returns the largest
/// relative error.
pub fn finite_diff_head_check(head: &Head, hidden: &[Vector], targets: &HeadTargets, step: f64) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&step) {
        return Err(Error::Domain(format!("finite-difference step {step} outside [1e-8, 1e-4]")));
    }
    let n = match targets {
        HeadTargets::Classes(v) => v.len(),
        HeadTargets::Values(v) => v.len(),
    };
    if n != hidden.len() {
        return Err(Error::shape("finite_diff_head_check", hidden.len(), n));
    }
    let mut analytic = Head::zeros_like(head);
    for (t, h) in hidden.iter().enumerate() {
        let y = head.forward(h)?;
        let dy: Vector = match targets {
            HeadTargets::Classes(labels) => {
                let mut d = y.clone();
                d[labels[t]] -= 1.0;
                d
            }
            HeadTargets::Values(values) => y.iter().zip(&values[t]).map(|(a, b)| a - b).collect(),
        };
        let hb = head_backward(head, h, &dy)?;
        for (a, b) in analytic.w_y.as_mut_slice().iter_mut().zip(hb.dw_y.as_slice()) {
            *a += b;
        }
        for (a, b) in analytic.b_y.iter_mut().zip(&hb.db_y) {
            *a += b;
        }
    }

    let mut probe = head.clone();
    let mut worst: f64 = 0.0;
    let sizes: Vec<usize> = head.tables().iter().map(|(_, t)| t.len()).collect();
    let grads: Vec<Vec<f64>> = analytic.tables().iter().map(|(_, t)| t.to_vec()).collect();
    for (k, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.tables()[k].1[j];
            probe.tables_mut()[k].1[j] = orig + step;
            let up = head_loss(&probe, hidden, targets)?;
            probe.tables_mut()[k].1[j] = orig - step;
            let down = head_loss(&probe, hidden, targets)?;
            probe.tables_mut()[k].1[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(rel_err(numeric, grads[k][j]));
        }
    }
    Ok(worst)
}

/// Options for a randomized comparison run.
#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub max_input: usize,
    pub max_hidden: usize,
    pub max_steps: usize,
    pub tolerance: f64,
    /// Test hook: perturbs this implementation table before comparing.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            trials: 20,
            seed: 0,
            max_input: 4,
            max_hidden: 6,
            max_steps: 5,
            tolerance: 1e-10,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub description: String,
    pub report: GradientReport,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckSummary {
    pub trials: Vec<TrialResult>,
    pub tolerance: f64,
}

impl GradcheckSummary {
    pub fn max_rel(&self) -> f64 {
        self.trials.iter().map(|t| t.report.max_rel()).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel() <= self.tolerance
    }

    /// Plain-text report, one line per trial plus a verdict.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in &self.trials {
            let worst = t.report.worst();
            s.push_str(&format!(
                "trial {:3} {:<40} max_rel {:.3e} max_abs {:.3e} worst {}\n",
                t.trial,
                t.description,
                t.report.max_rel(),
                t.report.max_abs(),
                worst.map_or("-".into(), |w| format!("{}[{}]", w.table, w.index)),
            ));
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        s.push_str(&format!(
            "{verdict}: {} trials, max relative error {:.3e} (tolerance {:.0e})\n",
            self.trials.len(),
            self.max_rel(),
            self.tolerance
        ));
        s
    }
}

/// A random instance: network, binary inputs and targets.
pub struct Instance {
    pub net: Network,
    pub inputs: Vec<Vector>,
    pub targets: InstanceTargets,
}

pub enum InstanceTargets {
    FinalClass(usize),
    EveryClass(Vec<usize>),
    EveryValue(Vec<Vector>),
}

impl Instance {
    pub fn random(opts: &GradcheckOptions, rng: &mut RngStream) -> Result<Instance> {
        let input = 1 + rng.below(opts.max_input.max(1));
        let hidden = 1 + rng.below(opts.max_hidden.max(1));
        let steps = 1 + rng.below(opts.max_steps.max(1));
        let output = 1 + rng.below(4);
        let mode = rng.below(3);
        let kind = if mode == 2 { HeadKind::Linear } else { HeadKind::Softmax };
        let mut net = Network::init(input, hidden, output, kind, 1.0, rng)?;
        // nonzero biases exercise the bias tables too
        for q in Gate::ALL {
            let p = net.layer.gate_mut(q);
            for b in p.b_h.iter_mut().chain(p.b_x.iter_mut()) {
                *b = 0.5 * rng.normal();
            }
        }
        for b in &mut net.head.b_y {
            *b = 0.5 * rng.normal();
        }
        let inputs = (0..steps)
            .map(|_| (0..input).map(|_| rng.bernoulli(0.5) as u8 as f64).collect())
            .collect();
        let targets = match mode {
            0 => InstanceTargets::FinalClass(rng.below(output)),
            1 => InstanceTargets::EveryClass((0..steps).map(|_| rng.below(output)).collect()),
            _ => InstanceTargets::EveryValue(
                (0..steps)
                    .map(|_| (0..output).map(|_| rng.normal()).collect())
                    .collect(),
            ),
        };
        Ok(Instance { net, inputs, targets })
    }

    pub fn targets(&self) -> Targets<'_> {
        match &self.targets {
            InstanceTargets::FinalClass(c) => Targets::FinalClass(*c),
            InstanceTargets::EveryClass(v) => Targets::EveryClass(v),
            InstanceTargets::EveryValue(v) => Targets::EveryValue(v),
        }
    }

    pub fn input_refs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }

    pub fn describe(&self) -> String {
        let t = match self.targets {
            InstanceTargets::FinalClass(_) => "final-class",
            InstanceTargets::EveryClass(_) => "every-class",
            InstanceTargets::EveryValue(_) => "every-value",
        };
        format!(
            "in {} hid {} out {} T {} {:?}/{t}",
            self.net.input_size(),
            self.net.hidden_size(),
            self.net.output_size(),
            self.inputs.len(),
            self.net.head.kind
        )
    }
}

/// Compares the backward pass against the reference engine on random
/// instances.
pub fn run_gradcheck(opts: &GradcheckOptions, cfg: &SurrogateConfig) -> Result<GradcheckSummary> {
    cfg.validate()?;
    let root = RngStream::new(opts.seed);
    let mut summary = GradcheckSummary {
        trials: Vec::with_capacity(opts.trials),
        tolerance: opts.tolerance,
    };
    for trial in 0..opts.trials {
        let mut rng = root.fork(trial as u64);
        let inst = Instance::random(opts, &mut rng)?;
        let inputs = inst.input_refs();
        let reference = reference_gradient(&inst.net, cfg, &inputs, inst.targets(), Readout::Direct)?;
        let mut ours = implementation_gradient(&inst.net, cfg, &inputs, inst.targets(), Readout::Direct)?;
        if let Some(name) = &opts.corrupt {
            corrupt_table(&mut ours, name)?;
        }
        summary.trials.push(TrialResult {
            trial,
            description: inst.describe(),
            report: compare_gradients(&ours, &reference)?,
        });
    }
    Ok(summary)
}

fn corrupt_table(grads: &mut GradientSet, name: &str) -> Result<()> {
    let mut tables = grads.tables_mut();
    let (_, t) = tables
        .iter_mut()
        .find(|(n, _)| n == name)
        .ok_or_else(|| Error::Config(format!("no gradient table named {name}")))?;
    for v in t.iter_mut() {
        *v = *v * 1.5 + 1e-3;
    }
    Ok(())
}

/// Names of the layer gradient tables, in checkpoint order.
pub fn layer_table_names() -> Vec<String> {
    LayerParams::zeros(1, 1).tables().into_iter().map(|(n, _)| n).collect()
}
