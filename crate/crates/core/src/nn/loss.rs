use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Scalar loss with its gradient with respect to the first argument.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f32,
    pub grad: Tensor4,
}

/// Mean absolute difference; subgradient `sign(a - b) / n`, zero at ties.
pub fn l1_loss(a: &Tensor4, b: &Tensor4) -> Result<LossGrad> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "l1: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.len() as f32;
    let mut grad = Tensor4::zeros(a.n, a.c, a.h, a.w);
    let mut sum = 0.0f64;
    for ((g, &x), &y) in grad.data.iter_mut().zip(&a.data).zip(&b.data) {
        let d = x - y;
        sum += d.abs() as f64;
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(LossGrad {
        value: (sum / n as f64) as f32,
        grad,
    })
}

/// Least-squares GAN loss: mean of `(score - target)^2`.
pub fn lsgan_loss(score: &Tensor4, target: f32) -> LossGrad {
    let n = score.len() as f32;
    let mut grad = score.clone();
    let mut sum = 0.0f64;
    for g in &mut grad.data {
        let d = *g - target;
        sum += (d * d) as f64;
        *g = 2.0 * d / n;
    }
    LossGrad {
        value: (sum / n as f64) as f32,
        grad,
    }
}

pub const REAL: f32 = 1.0;
pub const FAKE: f32 = 0.0;

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f32>) -> Tensor4 {
        let n = v.len();
        Tensor4::from_vec(1, 1, 1, n, v).unwrap()
    }

    #[test]
    fn l1_values() {
        let a = t(vec![1.0, -2.0, 3.0]);
        assert_eq!(l1_loss(&a, &a).unwrap().value, 0.0);
        assert!(l1_loss(&a, &a).unwrap().grad.data.iter().all(|&g| g == 0.0));
        let b = a.map(|x| x - 2.0);
        assert!((l1_loss(&a, &b).unwrap().value - 2.0).abs() < 1e-6);
        assert!(l1_loss(&a, &t(vec![0.0; 2])).is_err());
    }

    #[test]
    fn lsgan_values() {
        assert_eq!(lsgan_loss(&t(vec![1.0, 1.0]), REAL).value, 0.0);
        assert!((lsgan_loss(&t(vec![0.5]), REAL).value - 0.25).abs() < 1e-7);
        assert!((lsgan_loss(&t(vec![0.5]), FAKE).value - 0.25).abs() < 1e-7);
    }
}
