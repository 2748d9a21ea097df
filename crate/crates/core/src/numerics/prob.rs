//! Gaussian densities and divergences on plain tensors.

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

/// `ln(2π)`
pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Clamp range applied to every network log-variance output.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Elementwise `log N(x; mu, exp(log_var))`.
pub fn gaussian_log_prob(x: &Tensor, mu: &Tensor, log_var: &Tensor) -> Result<Tensor> {
    if x.shape() != mu.shape() {
        return Err(Error::dim("gaussian_log_prob", x.shape(), mu.shape()));
    }
    if x.shape() != log_var.shape() {
        return Err(Error::dim("gaussian_log_prob", x.shape(), log_var.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(mu.data())
        .zip(log_var.data())
        .map(|((&xv, &m), &lv)| {
            let d = xv - m;
            -0.5 * (LOG_2PI + lv + d * d * (-lv).exp())
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// `KL(N(mu, exp(log_var)) || N(0, 1))`, summed over every element.
pub fn kl_diag_gaussian_to_std_normal(mu: &Tensor, log_var: &Tensor) -> Result<f64> {
    if mu.shape() != log_var.shape() {
        return Err(Error::dim("kl_diag_gaussian_to_std_normal", mu.shape(), log_var.shape()));
    }
    Ok(0.5
        * mu
            .data()
            .iter()
            .zip(log_var.data())
            .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
            .sum::<f64>())
}

/// Softmax over the trailing axis.
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.shape());
    kernels::softmax_rows(a.data(), out.data_mut(), a.last_dim());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_2pi_constant() {
        assert!((LOG_2PI - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn density_at_mean_and_one_sigma() {
        let at_mean = gaussian_log_prob(&Tensor::scalar(0.3), &Tensor::scalar(0.3), &Tensor::scalar(0.0)).unwrap();
        assert!((at_mean.item() + 0.918_938_533_204_672_7).abs() < 1e-12);
        for sigma in [0.1_f64, 1.0, 7.5] {
            let lv = Tensor::scalar((sigma * sigma).ln());
            let m = gaussian_log_prob(&Tensor::scalar(2.0), &Tensor::scalar(2.0), &lv).unwrap().item();
            let s = gaussian_log_prob(&Tensor::scalar(2.0 + sigma), &Tensor::scalar(2.0), &lv).unwrap().item();
            assert!((m - s - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn density_hand_case() {
        let v = gaussian_log_prob(&Tensor::scalar(1.0), &Tensor::scalar(0.0), &Tensor::scalar(4f64.ln()))
            .unwrap()
            .item();
        let expected = -0.5 * (LOG_2PI + 4f64.ln() + 0.25);
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn kl_closed_forms() {
        let z = Tensor::zeros(&[3, 2]);
        assert_eq!(kl_diag_gaussian_to_std_normal(&z, &z).unwrap(), 0.0);
        let one = kl_diag_gaussian_to_std_normal(&Tensor::scalar(1.0), &Tensor::scalar(0.0)).unwrap();
        assert!((one - 0.5).abs() < 1e-15);
        let wide = kl_diag_gaussian_to_std_normal(&Tensor::scalar(0.0), &Tensor::scalar(4f64.ln())).unwrap();
        assert!((wide - 0.806_852_819_440_054_7).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(gaussian_log_prob(&a, &b, &a), Err(Error::Dimension { .. })));
        assert!(kl_diag_gaussian_to_std_normal(&a, &b).is_err());
    }

    #[test]
    fn softmax_cases() {
        let t = Tensor::from_rows(&[vec![0.0, 3f64.ln()], vec![1000.0, 1000.0]]).unwrap();
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap());
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let big = softmax_rows(&Tensor::from_rows(&[vec![1000.0; 3]]).unwrap());
        for v in big.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(softmax_rows(&t).is_finite());
    }
}
