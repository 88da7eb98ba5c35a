use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to predicted probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-6;

fn check_rows(name: &str, t: &Tensor) -> Result<()> {
    for r in 0..t.rows() {
        let s: f64 = t.row(r).iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Argument(format!(
                "{name} row {r} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

fn check_pair(predicted: &Tensor, target: &Tensor) -> Result<()> {
    if predicted.last_dim() != target.last_dim() || predicted.rows() != target.rows() {
        return Err(Error::Dimension(format!(
            "predicted {:?} vs target {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    check_rows("predicted", predicted)?;
    check_rows("target", target)
}

/// Mean over rows of `-Σ_k target_k · ln(max(predicted_k, LOG_CLAMP))`.
pub fn cce_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    check_pair(predicted, target)?;
    let rows = predicted.rows();
    let total: f64 = (0..rows)
        .map(|r| {
            predicted
                .row(r)
                .iter()
                .zip(target.row(r))
                .filter(|(_, &y)| y != 0.0)
                .map(|(&p, &y)| -y * p.clamp(LOG_CLAMP, 1.0).ln())
                .sum::<f64>()
        })
        .sum();
    Ok(total / rows as f64)
}

/// Gradient of `cce_loss(softmax(logits), target)` w.r.t. the logits,
/// given the softmax output: `(p - y) / rows`.
pub fn softmax_cce_backward(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(predicted, target)?;
    let rows = predicted.rows() as f64;
    let mut grad = predicted.clone();
    for (g, &y) in grad.data_mut().iter_mut().zip(target.data()) {
        *g = (*g - y) / rows;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let y = row(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(cce_loss(&y, &y).unwrap().abs() < 1e-15);
    }

    #[test]
    fn half_half_against_hard_target() {
        let loss = cce_loss(&row(&[0.5, 0.5]), &row(&[1.0, 0.0])).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn smoothed_target_entropy() {
        let y = row(&[0.9, 0.025, 0.025, 0.025, 0.025]);
        // -0.9 ln 0.9 - 4 * 0.025 ln 0.025, evaluated by hand
        let expected = -(0.9f64 * 0.9f64.ln()) - 4.0 * 0.025 * 0.025f64.ln();
        let loss = cce_loss(&y, &y).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.4637).abs() < 1e-3, "{loss}");
    }

    #[test]
    fn zero_prediction_is_clamped() {
        let loss = cce_loss(&row(&[0.0, 1.0]), &row(&[1.0, 0.0])).unwrap();
        assert!((loss - (-LOG_CLAMP.ln())).abs() < 1e-9);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let err = cce_loss(&row(&[0.5, 0.5]), &row(&[1.0, 0.0, 0.0]));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let err = cce_loss(&row(&[0.5, 0.6]), &row(&[1.0, 0.0]));
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn fused_gradient_is_p_minus_y() {
        let p = row(&[0.2, 0.7, 0.1]);
        let y = row(&[0.0, 1.0, 0.0]);
        let g = softmax_cce_backward(&p, &y).unwrap();
        let expected = [0.2, -0.3, 0.1];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
