//! Output heads, losses and the perplexity metric.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};

/// Smallest probability fed to a logarithm when reporting cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// `y = softmax(w_y h + b_y)`, trained with cross-entropy.
    Softmax,
    /// `y = w_y h + b_y`, trained with least squares.
    Linear,
}

impl HeadKind {
    pub fn code(self) -> u32 {
        match self {
            HeadKind::Softmax => 0,
            HeadKind::Linear => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(HeadKind::Softmax),
            1 => Some(HeadKind::Linear),
            _ => None,
        }
    }
}

/// Dense readout from the binary hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub kind: HeadKind,
    /// output × hidden
    pub w_y: Matrix,
    pub b_y: Vector,
}

impl Head {
    pub fn zeros(kind: HeadKind, hidden_size: usize, output_size: usize) -> Self {
        Head {
            kind,
            w_y: Matrix::zeros(output_size, hidden_size),
            b_y: vec![0.0; output_size],
        }
    }

    pub fn zeros_like(other: &Head) -> Self {
        Head::zeros(other.kind, other.hidden_size(), other.output_size())
    }

    /// Weights drawn as `std * N(0, 1)` row-major, biases zero.
    pub fn init(
        kind: HeadKind,
        hidden_size: usize,
        output_size: usize,
        std: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if hidden_size == 0 || output_size == 0 {
            return Err(Error::Config(format!(
                "head sizes must be positive (hidden {hidden_size}, output {output_size})"
            )));
        }
        let mut head = Head::zeros(kind, hidden_size, output_size);
        if std != 0.0 {
            head.w_y = Matrix::standard_normal(output_size, hidden_size, rng);
            head.w_y.as_mut_slice().iter_mut().for_each(|v| *v *= std);
        }
        Ok(head)
    }

    pub fn hidden_size(&self) -> usize {
        self.w_y.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w_y.rows()
    }

    pub fn tables(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_y".to_string(), self.w_y.as_slice()),
            ("b_y".to_string(), self.b_y.as_slice()),
        ]
    }

    pub fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w_y".to_string(), self.w_y.as_mut_slice()),
            ("b_y".to_string(), self.b_y.as_mut_slice()),
        ]
    }

    /// `w_y h + b_y`, skipping silent hidden units.
    pub fn logits(&self, h: &[f64]) -> Result<Vector> {
        if h.len() != self.hidden_size() {
            return Err(Error::shape("head", self.w_y.shape_str(), h.len()));
        }
        let on: Vec<(usize, f64)> = h
            .iter()
            .enumerate()
            .filter_map(|(k, &v)| (v != 0.0).then_some((k, v)))
            .collect();
        Ok((0..self.output_size())
            .map(|r| {
                let w = self.w_y.row(r);
                on.iter().map(|&(k, v)| w[k] * v).sum::<f64>() + self.b_y[r]
            })
            .collect())
    }

    /// Head output: probabilities for a softmax head, raw values for a linear one.
    pub fn forward(&self, h: &[f64]) -> Result<Vector> {
        let z = self.logits(h)?;
        Ok(match self.kind {
            HeadKind::Softmax => softmax(&z),
            HeadKind::Linear => z,
        })
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(z: &[f64]) -> Vector {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vector = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

pub fn softmax_forward(head: &Head, h: &[f64]) -> Result<Vector> {
    Ok(softmax(&head.logits(h)?))
}

/// `y - y_true`: the output-layer gradient shared by softmax/cross-entropy and
/// linear/least-squares heads.
pub fn ce_output_grad(y: &[f64], y_true: &[f64]) -> Result<Vector> {
    if y.len() != y_true.len() {
        return Err(Error::shape("ce_output_grad", y.len(), y_true.len()));
    }
    Ok(y.iter().zip(y_true).map(|(a, b)| a - b).collect())
}

/// Same as [`ce_output_grad`] for an integer label.
pub fn class_output_grad(y: &[f64], label: usize) -> Result<Vector> {
    if label >= y.len() {
        return Err(Error::Index {
            index: label,
            len: y.len(),
        });
    }
    let mut g = y.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

/// `-ln max(p_label, PROB_FLOOR)`.
pub fn cross_entropy(y: &[f64], label: usize) -> f64 {
    -y[label].max(PROB_FLOOR).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadBackward {
    pub dh: Vector,
    pub dw_y: Matrix,
    pub db_y: Vector,
}

/// `dh = w_yᵀ dL/dy`, `dw_y = dL/dy ⊗ h`, `db_y = dL/dy`.
pub fn head_backward(head: &Head, h: &[f64], dl_dy: &[f64]) -> Result<HeadBackward> {
    if dl_dy.len() != head.output_size() || h.len() != head.hidden_size() {
        return Err(Error::shape(
            "head_backward",
            head.w_y.shape_str(),
            format!("dy {} / h {}", dl_dy.len(), h.len()),
        ));
    }
    let mut dw_y = Matrix::zeros(head.output_size(), head.hidden_size());
    dw_y.add_outer(dl_dy, h)?;
    Ok(HeadBackward {
        dh: head.w_y.matvec_t(dl_dy)?,
        dw_y,
        db_y: dl_dy.to_vec(),
    })
}

/// Adds the head parameter gradient for one step into `acc`, returning `dL/dh`.
pub(crate) fn head_backward_into(head: &Head, h: &[f64], dl_dy: &[f64], acc: &mut Head) -> Vector {
    for (r, &d) in dl_dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = acc.w_y.row_mut(r);
        for (k, &hv) in h.iter().enumerate() {
            if hv != 0.0 {
                row[k] += d * hv;
            }
        }
        acc.b_y[r] += d;
    }
    let mut dh = vec![0.0; head.hidden_size()];
    for (r, &d) in dl_dy.iter().enumerate() {
        if d != 0.0 {
            crate::numerics::axpy(d, head.w_y.row(r), &mut dh);
        }
    }
    dh
}

/// `½ Σ_t ‖y_t − target_t‖²` and the per-step gradients `y_t − target_t`.
pub fn mse_loss_and_grad(y_seq: &[Vector], target_seq: &[Vector]) -> Result<(f64, Vec<Vector>)> {
    if y_seq.len() != target_seq.len() {
        return Err(Error::shape("mse_loss", y_seq.len(), target_seq.len()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(y_seq.len());
    for (y, t) in y_seq.iter().zip(target_seq) {
        let g = ce_output_grad(y, t)?;
        loss += 0.5 * g.iter().map(|v| v * v).sum::<f64>();
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Perplexity together with a diagnostic for zero-probability symbols.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perplexity {
    pub value: f64,
    /// First position whose observed symbol had probability 0; the value is
    /// then `+inf`.
    pub first_zero: Option<usize>,
}

/// `exp(-(1/T) Σ ln p_t)`, evaluated in log space.
pub fn perplexity(prob_of_observed: &[f64]) -> Result<Perplexity> {
    if prob_of_observed.is_empty() {
        return Err(Error::Domain("perplexity of an empty stream".into()));
    }
    let mut log_sum = 0.0;
    for (t, &p) in prob_of_observed.iter().enumerate() {
        if !(p >= 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("probability {p} at position {t}")));
        }
        if p == 0.0 {
            return Ok(Perplexity {
                value: f64::INFINITY,
                first_zero: Some(t),
            });
        }
        log_sum += p.ln();
    }
    Ok(Perplexity {
        value: (-log_sum / prob_of_observed.len() as f64).exp(),
        first_zero: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_logits_are_uniform() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let y = softmax(&[3.0; 5]);
        assert!(y.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let head = Head::zeros(HeadKind::Softmax, 4, 7);
        let y = softmax_forward(&head, &[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(y.iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-15));
    }

    /// `p_i = 1 / Σ_j exp(z_j − z_i)` with Neumaier-compensated summation.
    fn softmax_reference(z: &[f64]) -> Vec<f64> {
        z.iter()
            .map(|zi| {
                let (mut sum, mut comp) = (0.0f64, 0.0f64);
                for zj in z {
                    let term = (zj - zi).exp();
                    let t = sum + term;
                    if sum.abs() >= term.abs() {
                        comp += (sum - t) + term;
                    } else {
                        comp += (term - t) + sum;
                    }
                    sum = t;
                }
                1.0 / (sum + comp)
            })
            .collect()
    }

    #[test]
    fn softmax_matches_compensated_reference() {
        let mut rng = RngStream::new(31);
        for _ in 0..50 {
            let head = Head::init(HeadKind::Softmax, 12, 9, 1.0, &mut rng).unwrap();
            let h: Vec<f64> = (0..12).map(|_| (rng.uniform() < 0.5) as u8 as f64).collect();
            let y = softmax_forward(&head, &h).unwrap();
            let reference = softmax_reference(&head.logits(&h).unwrap());
            for (a, b) in y.iter().zip(&reference) {
                assert!((a - b).abs() <= 1e-13 * b.max(1e-300) + 1e-300, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn output_gradient() {
        let g = ce_output_grad(&[0.7, 0.3], &[1.0, 0.0]).unwrap();
        assert!((g[0] + 0.3).abs() < 1e-15 && (g[1] - 0.3).abs() < 1e-15);
        assert_eq!(ce_output_grad(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), vec![0.0, 0.0]);
        assert!(ce_output_grad(&[1.0], &[1.0, 0.0]).is_err());
        assert_eq!(class_output_grad(&[0.7, 0.3], 0).unwrap(), g);
    }

    #[test]
    fn scalar_head_backward() {
        let head = Head {
            kind: HeadKind::Linear,
            w_y: Matrix::from_rows(&[&[2.0]]).unwrap(),
            b_y: vec![0.0],
        };
        let b = head_backward(&head, &[1.0], &[0.5]).unwrap();
        assert_eq!(b.dh, vec![1.0]);
        assert_eq!(b.dw_y.as_slice(), &[0.5]);
        assert_eq!(b.db_y, vec![0.5]);

        let zero = head_backward(&head, &[1.0], &[0.0]).unwrap();
        assert!(zero.dh.iter().chain(zero.dw_y.as_slice()).chain(&zero.db_y).all(|&v| v == 0.0));
    }

    #[test]
    fn head_backward_into_agrees() {
        let mut rng = RngStream::new(5);
        let head = Head::init(HeadKind::Softmax, 6, 4, 1.0, &mut rng).unwrap();
        let h = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let dy = [0.1, -0.4, 0.2, 0.1];
        let mut acc = Head::zeros_like(&head);
        let dh = head_backward_into(&head, &h, &dy, &mut acc);
        let b = head_backward(&head, &h, &dy).unwrap();
        assert_eq!(acc.w_y, b.dw_y);
        assert_eq!(acc.b_y, b.db_y);
        for (a, e) in dh.iter().zip(&b.dh) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_cases() {
        let (l, g) = mse_loss_and_grad(&[vec![1.0]], &[vec![0.0]]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, vec![vec![1.0]]);
        let (l, g) = mse_loss_and_grad(&[vec![0.3, 2.0]], &[vec![0.3, 2.0]]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![vec![0.0, 0.0]]);
        assert!(mse_loss_and_grad(&[vec![1.0]], &[]).is_err());
    }

    #[test]
    fn mse_matches_finite_differences() {
        let mut rng = RngStream::new(99);
        let ys: Vec<Vector> = (0..5).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let ts: Vec<Vector> = (0..5).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let (_, grads) = mse_loss_and_grad(&ys, &ts).unwrap();
        let eps = 1e-6;
        for t in 0..5 {
            for k in 0..2 {
                let mut up = ys.clone();
                up[t][k] += eps;
                let mut down = ys.clone();
                down[t][k] -= eps;
                let numeric = (mse_loss_and_grad(&up, &ts).unwrap().0
                    - mse_loss_and_grad(&down, &ts).unwrap().0)
                    / (2.0 * eps);
                assert!((numeric - grads[t][k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn perplexity_values() {
        let uniform = vec![1.0 / 41.0; 17];
        assert!((perplexity(&uniform).unwrap().value - 41.0).abs() < 1e-9);
        assert_eq!(perplexity(&[1.0; 9]).unwrap().value, 1.0);
        let p = perplexity(&[0.5, 0.25]).unwrap().value;
        assert!((p - 2.828_427_124_746_19).abs() < 1e-12);
        let z = perplexity(&[0.5, 0.0, 0.1]).unwrap();
        assert_eq!(z.value, f64::INFINITY);
        assert_eq!(z.first_zero, Some(1));
        assert!(perplexity(&[]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            z in proptest::collection::vec(-30.0f64..30.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let y = softmax(&z);
            prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(y.iter().all(|&p| p > 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            for (a, b) in y.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn output_gradient_sums_to_zero(z in proptest::collection::vec(-5.0f64..5.0, 2..12), pick in 0usize..100) {
            let y = softmax(&z);
            let g = class_output_grad(&y, pick % y.len()).unwrap();
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
