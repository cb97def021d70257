//! A spiking LSTM layer with its output head, and the per-sequence loss and
//! gradient shared by training, evaluation and the gradient checker.

use crate::error::{Error, Result};
use crate::head::{cross_entropy, head_backward_into, softmax, Head, HeadKind};
use crate::layer::{bptt_accumulate, forward_sequence, init_params, GradientSet, LayerParams, LayerState, StepCache};
use crate::numerics::{axpy, dot, Matrix, RngStream, Vector};
use crate::optim::ParamTables;
use crate::spike::SurrogateConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layer: LayerParams,
    pub head: Head,
}

impl Network {
    /// Layer weights first, then head weights, all from `rng`.
    pub fn init(
        input_size: usize,
        hidden_size: usize,
        output_size: usize,
        kind: HeadKind,
        head_std: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let layer = init_params(input_size, hidden_size, rng)?;
        let head = Head::init(kind, hidden_size, output_size, head_std, rng)?;
        Ok(Network { layer, head })
    }

    pub fn input_size(&self) -> usize {
        self.layer.input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.layer.hidden_size()
    }

    pub fn output_size(&self) -> usize {
        self.head.output_size()
    }

    pub fn zero_grads(&self) -> GradientSet {
        GradientSet::zeros_like(&self.layer, Some(&self.head))
    }

    pub fn parameter_count(&self) -> usize {
        self.tables().iter().map(|(_, t)| t.len()).sum()
    }
}

impl ParamTables for Network {
    fn tables(&self) -> Vec<(String, &[f64])> {
        let mut t = self.layer.tables();
        t.extend(self.head.tables());
        t
    }

    fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = self.layer.tables_mut();
        t.extend(self.head.tables_mut());
        t
    }
}

/// Supervision attached to one input sequence.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// One label, scored on the last step only.
    FinalClass(usize),
    /// A label at every step.
    EveryClass(&'a [usize]),
    /// A regression target at every step.
    EveryValue(&'a [Vector]),
}

/// How head outputs become class scores.
#[derive(Clone, Copy, Debug)]
pub enum Readout<'a> {
    /// The head output is used as is.
    Direct,
    /// A linear head emits a vector `y`; class `r` scores `-½‖E_r − y‖²`
    /// against row `r` of the fixed table `E` (vocab × dim), followed by a
    /// softmax. The most likely class is the nearest row.
    Projected(&'a Matrix),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceOutcome {
    pub loss: f64,
    /// Head output at each scored step (probabilities for class targets).
    pub outputs: Vec<Vector>,
    /// Probability assigned to the true class at each scored step.
    pub target_probs: Vec<f64>,
    pub correct: usize,
    pub scored: usize,
    pub final_state: Option<LayerState>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn projected_scores(table: &Matrix, y: &[f64]) -> Result<Vector> {
    if table.cols() != y.len() {
        return Err(Error::shape("projected readout", table.shape_str(), y.len()));
    }
    Ok((0..table.rows())
        .map(|r| {
            let e = table.row(r);
            dot(e, y) - 0.5 * dot(e, e)
        })
        .collect())
}

/// Unnormalized class scores for hidden state `h`; a softmax of them gives
/// the class probabilities.
pub fn class_scores(head: &Head, readout: Readout<'_>, h: &[f64]) -> Result<Vector> {
    let z = head.logits(h)?;
    match (head.kind, readout) {
        (HeadKind::Softmax, Readout::Direct) => Ok(z),
        (HeadKind::Linear, Readout::Projected(table)) => projected_scores(table, &z),
        (kind, readout) => Err(Error::Config(format!(
            "a {kind:?} head with {readout:?} readout has no class scores"
        ))),
    }
}

/// Scores one step. Returns the loss, the gradient w.r.t. the head output,
/// the reported output and the probability of the true class (if any).
fn score_step(
    head: &Head,
    readout: Readout<'_>,
    h: &[f64],
    target: StepTarget<'_>,
) -> Result<(f64, Vector, Vector, Option<(f64, bool)>)> {
    let z = head.logits(h)?;
    match (target, head.kind, readout) {
        (StepTarget::Class(c), HeadKind::Softmax, Readout::Direct) => {
            let y = softmax(&z);
            if c >= y.len() {
                return Err(Error::Index { index: c, len: y.len() });
            }
            let loss = cross_entropy(&y, c);
            let mut dy = y.clone();
            dy[c] -= 1.0;
            let hit = argmax(&y) == c;
            Ok((loss, dy, y.clone(), Some((y[c], hit))))
        }
        (StepTarget::Class(c), HeadKind::Linear, Readout::Projected(table)) => {
            if c >= table.rows() {
                return Err(Error::Index { index: c, len: table.rows() });
            }
            let p = softmax(&projected_scores(table, &z)?);
            let loss = cross_entropy(&p, c);
            let mut dy = vec![0.0; z.len()];
            for (r, &pr) in p.iter().enumerate() {
                let d = pr - if r == c { 1.0 } else { 0.0 };
                if d != 0.0 {
                    axpy(d, table.row(r), &mut dy);
                }
            }
            let hit = argmax(&p) == c;
            Ok((loss, dy, p.clone(), Some((p[c], hit))))
        }
        (StepTarget::Value(t), HeadKind::Linear, Readout::Direct) => {
            if t.len() != z.len() {
                return Err(Error::shape("regression target", z.len(), t.len()));
            }
            let dy: Vector = z.iter().zip(t).map(|(a, b)| a - b).collect();
            let loss = 0.5 * dy.iter().map(|d| d * d).sum::<f64>();
            Ok((loss, dy, z, None))
        }
        (target, kind, readout) => Err(Error::Config(format!(
            "target {target:?} is incompatible with a {kind:?} head and {readout:?} readout"
        ))),
    }
}

#[derive(Clone, Copy, Debug)]
enum StepTarget<'a> {
    Class(usize),
    Value(&'a [f64]),
}

fn step_target<'a>(targets: &Targets<'a>, t: usize, steps: usize) -> Result<Option<StepTarget<'a>>> {
    Ok(match *targets {
        Targets::FinalClass(c) => (t + 1 == steps).then_some(StepTarget::Class(c)),
        Targets::EveryClass(cs) => {
            if cs.len() != steps {
                return Err(Error::shape("class targets", steps, cs.len()));
            }
            Some(StepTarget::Class(cs[t]))
        }
        Targets::EveryValue(vs) => {
            if vs.len() != steps {
                return Err(Error::shape("value targets", steps, vs.len()));
            }
            Some(StepTarget::Value(&vs[t]))
        }
    })
}

/// Forward pass, loss, and (when `grads` is given) the full backward pass
/// added into `grads`.
///
/// The loss is summed over scored steps; the gradient is that of the summed
/// loss, scaled by `grad_scale` before accumulation.
#[allow(clippy::too_many_arguments)]
pub fn sequence_loss(
    net: &Network,
    cfg: &SurrogateConfig,
    inputs: &[&[f64]],
    initial: &LayerState,
    targets: Targets<'_>,
    readout: Readout<'_>,
    grads: Option<(&mut GradientSet, f64)>,
) -> Result<SequenceOutcome> {
    let caches = forward_sequence(&net.layer, cfg, inputs, initial)?;
    sequence_loss_from_caches(net, cfg, &caches, targets, readout, grads)
}

pub fn sequence_loss_from_caches(
    net: &Network,
    cfg: &SurrogateConfig,
    caches: &[StepCache],
    targets: Targets<'_>,
    readout: Readout<'_>,
    grads: Option<(&mut GradientSet, f64)>,
) -> Result<SequenceOutcome> {
    let steps = caches.len();
    let hidden = net.hidden_size();
    let mut out = SequenceOutcome {
        final_state: caches.last().map(StepCache::state),
        ..Default::default()
    };
    let mut dh_seq: Vec<Vector> = Vec::new();
    let mut grads = grads;
    if grads.is_some() {
        dh_seq = vec![vec![0.0; hidden]; steps];
    }

    for (t, cache) in caches.iter().enumerate() {
        let Some(target) = step_target(&targets, t, steps)? else {
            continue;
        };
        let (loss, dy, y, prob) = score_step(&net.head, readout, &cache.h, target)?;
        out.loss += loss;
        out.outputs.push(y);
        out.scored += 1;
        if let Some((p, hit)) = prob {
            out.target_probs.push(p);
            out.correct += hit as usize;
        }
        if let Some((acc, scale)) = grads.as_mut() {
            let dy: Vector = dy.iter().map(|d| d * *scale).collect();
            let head_acc = acc
                .head
                .as_mut()
                .ok_or_else(|| Error::Config("gradient set has no head tables".into()))?;
            dh_seq[t] = head_backward_into(&net.head, &cache.h, &dy, head_acc);
        }
    }

    if let Some((acc, _)) = grads {
        let (dh0, dc0) = bptt_accumulate(&net.layer, cfg, caches, &dh_seq, &mut acc.layer)?;
        for (a, b) in acc.dh0.iter_mut().zip(dh0) {
            *a += b;
        }
        for (a, b) in acc.dc0.iter_mut().zip(dc0) {
            *a += b;
        }
    }
    Ok(out)
}

/// Loss and gradient of a single sequence, in a fresh [`GradientSet`].
pub fn sequence_gradient(
    net: &Network,
    cfg: &SurrogateConfig,
    inputs: &[&[f64]],
    targets: Targets<'_>,
) -> Result<(f64, GradientSet)> {
    let mut grads = net.zero_grads();
    let out = sequence_loss(
        net,
        cfg,
        inputs,
        &LayerState::zeros(net.hidden_size()),
        targets,
        Readout::Direct,
        Some((&mut grads, 1.0)),
    )?;
    Ok((out.loss, grads))
}
