use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A set of named trainable tensors with a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<(&'static str, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;
}

/// Plain gradient descent: `param -= learning_rate * grad` for every tensor.
///
/// All gradients are validated before any parameter changes, so a failed step
/// leaves `params` untouched.
pub fn sgd_step<P: Parameterized>(params: &mut P, grads: &P, learning_rate: f64) -> Result<()> {
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::Argument(format!(
            "learning rate must be a non-negative finite number, got {learning_rate}"
        )));
    }
    let grads = grads.params();
    let targets = params.params_mut();
    if grads.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} gradient tensors for {} parameters",
            grads.len(),
            targets.len()
        )));
    }
    for ((name, p), (_, g)) in targets.iter().zip(&grads) {
        if !p.same_shape(g) {
            return Err(Error::Dimension(format!(
                "gradient {:?} does not mirror parameter {name} {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Training(format!("non-finite gradient in {name}")));
        }
    }
    for ((_, p), (_, g)) in targets.into_iter().zip(grads) {
        p.add_scaled(g, -learning_rate)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad {
        x: Tensor,
    }

    impl Parameterized for Quad {
        fn params(&self) -> Vec<(&'static str, &Tensor)> {
            vec![("x", &self.x)]
        }
        fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
            vec![("x", &mut self.x)]
        }
    }

    fn quad(v: &[f64]) -> Quad {
        Quad { x: Tensor::vector(v) }
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut p = quad(&[1.0, -2.0]);
        sgd_step(&mut p, &quad(&[0.3, 0.4]), 0.0).unwrap();
        assert_eq!(p.x.data(), &[1.0, -2.0]);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut p = quad(&[1.0]);
        sgd_step(&mut p, &quad(&[0.5]), 0.1).unwrap();
        assert!((p.x.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn descends_convex_quadratic() {
        // loss = sum((x - c)^2), grad = 2(x - c)
        let c = [3.0, -1.0, 0.5];
        let loss = |q: &Quad| q.x.data().iter().zip(c).map(|(x, c)| (x - c).powi(2)).sum::<f64>();
        let mut p = quad(&[0.0, 0.0, 0.0]);
        for _ in 0..5 {
            let before = loss(&p);
            let g = quad(&p.x.data().iter().zip(c).map(|(x, c)| 2.0 * (x - c)).collect::<Vec<_>>());
            sgd_step(&mut p, &g, 0.05).unwrap();
            assert!(loss(&p) < before);
        }
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut p = quad(&[1.0]);
        let err = sgd_step(&mut p, &quad(&[f64::NAN]), 0.1).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains('x')));
        assert_eq!(p.x.data(), &[1.0]);
    }
}
