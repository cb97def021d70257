use std::f64::consts::PI;

use crate::data::spikes::{bernoulli_encode_rows, SpikeTrain};
use crate::error::Result;
use crate::numerics::RngStream;

/// `0.5 sin 3x + 0.5 sin 6x + 1`, which stays within [0, 2].
pub fn toy_signal(x: f64) -> f64 {
    0.5 * (3.0 * x).sin() + 0.5 * (6.0 * x).sin() + 1.0
}

/// Grid points `x_t = 2πt/T` for `t = 0..T`.
pub fn toy_grid(steps: usize) -> Vec<f64> {
    (0..steps).map(|t| 2.0 * PI * t as f64 / steps as f64).collect()
}

/// One sample of the toy regression task: every step fires each of the
/// `input_size` channels with probability `f(x_t) / 2`; the target is `f(x_t)`.
pub fn sinusoid_dataset(steps: usize, input_size: usize, rng: &mut RngStream) -> Result<(SpikeTrain, Vec<f64>)> {
    let target: Vec<f64> = toy_grid(steps).into_iter().map(toy_signal).collect();
    let rows: Vec<Vec<f64>> = target.iter().map(|&y| vec![y / 2.0; input_size]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok((bernoulli_encode_rows(&refs, rng)?, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_at_zero() {
        assert_eq!(toy_signal(0.0), 1.0);
    }

    #[test]
    fn normalized_values_lie_in_unit_interval() {
        let fine: Vec<f64> = toy_grid(100_000).into_iter().map(toy_signal).collect();
        let (lo, hi) = fine
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo >= 0.0 && hi <= 2.0, "{lo} {hi}");
        // the signal gets within a few percent of both analytic bounds
        assert!(lo < 0.3 && hi > 1.7, "{lo} {hi}");
    }

    #[test]
    fn dataset_shape_and_binary() {
        let (train, target) = sinusoid_dataset(100, 20, &mut RngStream::new(3)).unwrap();
        assert_eq!((train.steps(), train.batch(), train.features()), (100, 1, 20));
        assert_eq!(target.len(), 100);
        assert!(train.is_binary());
        assert_eq!(target[0], 1.0);
    }
}
