//! Pose regression losses with analytic gradients.

/// Default weight of the translation term in the pose loss.
pub const DEFAULT_POSE_BETA: f64 = 0.1;

/// Loss value with its gradient w.r.t. the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Euclidean translation loss `||t - t_hat||`. The gradient at zero
/// difference is taken as zero.
pub fn loss_trans(t: &[f64], t_hat: &[f64]) -> LossGrad {
    assert_eq!(t.len(), t_hat.len());
    let diff: Vec<f64> = t_hat.iter().zip(t).map(|(a, b)| a - b).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let grad = if value > 0.0 { diff.iter().map(|d| d / value).collect() } else { vec![0.0; diff.len()] };
    LossGrad { value, grad }
}

/// `log(cosh(x))` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Log-cosh rotation loss summed over components.
pub fn loss_rot(r: &[f64], r_hat: &[f64]) -> LossGrad {
    assert_eq!(r.len(), r_hat.len());
    let value = r.iter().zip(r_hat).map(|(a, b)| log_cosh(a - b)).sum();
    let grad = r.iter().zip(r_hat).map(|(a, b)| (b - a).tanh()).collect();
    LossGrad { value, grad }
}

/// `loss_rot + beta * loss_trans` for poses laid out as `[t0, t1, t2, r0, r1]`.
pub fn loss_pose(pose: &[f64; 5], pose_hat: &[f64; 5], beta: f64) -> LossGrad {
    let tr = loss_trans(&pose[..3], &pose_hat[..3]);
    let rot = loss_rot(&pose[3..], &pose_hat[3..]);
    let mut grad: Vec<f64> = tr.grad.iter().map(|g| beta * g).collect();
    grad.extend(rot.grad);
    LossGrad { value: rot.value + beta * tr.value, grad }
}
