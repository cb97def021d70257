use crate::error::{Error, Result};
use crate::numerics::{RngStream, Vector};

/// Time-major binary tensor: `steps × batch × features`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain {
    steps: usize,
    batch: usize,
    features: usize,
    data: Vec<f64>,
}

impl SpikeTrain {
    pub fn zeros(steps: usize, batch: usize, features: usize) -> Self {
        SpikeTrain {
            steps,
            batch,
            features,
            data: vec![0.0; steps * batch * features],
        }
    }

    pub fn from_data(steps: usize, batch: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != steps * batch * features {
            return Err(Error::shape(
                "SpikeTrain",
                format!("{steps}x{batch}x{features}"),
                data.len(),
            ));
        }
        if let Some(k) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invariant(format!("spike train entry {k} = {}", data[k])));
        }
        Ok(SpikeTrain {
            steps,
            batch,
            features,
            data,
        })
    }

    /// Stacks single-sample trains of equal shape along the batch axis.
    pub fn stack(samples: &[SpikeTrain]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Domain("cannot stack an empty batch".into()))?;
        let (steps, features) = (first.steps, first.features);
        let batch: usize = samples.iter().map(|s| s.batch).sum();
        let mut out = SpikeTrain::zeros(steps, batch, features);
        let mut b0 = 0;
        for s in samples {
            if s.steps != steps || s.features != features {
                return Err(Error::shape(
                    "SpikeTrain::stack",
                    format!("{steps}x{features}"),
                    format!("{}x{}", s.steps, s.features),
                ));
            }
            for b in 0..s.batch {
                for t in 0..steps {
                    let dst = out.offset(t, b0 + b);
                    out.data[dst..dst + features].copy_from_slice(s.step(t, b));
                }
            }
            b0 += s.batch;
        }
        Ok(out)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, t: usize, b: usize) -> usize {
        (t * self.batch + b) * self.features
    }

    /// Features of sample `b` at step `t`.
    #[inline]
    pub fn step(&self, t: usize, b: usize) -> &[f64] {
        let o = self.offset(t, b);
        &self.data[o..o + self.features]
    }

    /// Per-step inputs of sample `b`, ready for `forward_sequence`.
    pub fn sample_steps(&self, b: usize) -> Vec<&[f64]> {
        (0..self.steps).map(|t| self.step(t, b)).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn firing_rate(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn check_probability(p: f64, k: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "spike probability {p} at feature {k} is outside [0, 1]"
        )));
    }
    Ok(())
}

/// Rate coding of a static vector: every step draws each feature
/// independently with probability equal to its value.
pub fn bernoulli_spike_encode(values: &[f64], steps: usize, rng: &mut RngStream) -> Result<SpikeTrain> {
    for (k, &p) in values.iter().enumerate() {
        check_probability(p, k)?;
    }
    let mut data = Vec::with_capacity(steps * values.len());
    for _ in 0..steps {
        data.extend(values.iter().map(|&p| rng.bernoulli(p) as u8 as f64));
    }
    Ok(SpikeTrain {
        steps,
        batch: 1,
        features: values.len(),
        data,
    })
}

/// Rate coding of a time-varying input: step `t` uses the probabilities in
/// `rows[t]`.
pub fn bernoulli_encode_rows(rows: &[&[f64]], rng: &mut RngStream) -> Result<SpikeTrain> {
    let features = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * features);
    for row in rows {
        if row.len() != features {
            return Err(Error::shape("bernoulli_encode_rows", features, row.len()));
        }
        for (k, &p) in row.iter().enumerate() {
            check_probability(p, k)?;
            data.push(rng.bernoulli(p) as u8 as f64);
        }
    }
    Ok(SpikeTrain {
        steps: rows.len(),
        batch: 1,
        features,
        data,
    })
}

pub fn one_hot_encode(id: usize, n: usize) -> Result<Vector> {
    if id >= n {
        return Err(Error::Index { index: id, len: n });
    }
    let mut v = vec![0.0; n];
    v[id] = 1.0;
    Ok(v)
}
