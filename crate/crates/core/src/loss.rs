//! Numeric kernels for the normalized-ReLU activation and the adaptive wing
//! regression loss, with analytic gradients, plus a soft-Dice comparator.
//!
//! The adaptive wing loss is piecewise: a logarithmic branch for residuals
//! below `theta` and a linear branch beyond, joined continuously through the
//! per-target terms `A(y)` and `C(y)`. Targets `y` are expected in [0, 1];
//! predictions may lie outside [0, 1] and are accepted as-is.

use crate::error::{Error, Result};

/// Flat tensor of reals with a shape descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTensor {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl VoxelTensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} product {} does not match data length {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(VoxelTensor { data, shape })
    }

    pub fn from_slice(data: &[f64]) -> Self {
        VoxelTensor {
            data: data.to_vec(),
            shape: vec![data.len()],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Adaptive wing hyperparameters. Defaults are the training values
/// omega = 8, epsilon = 1, theta = 0.5, alpha = 2.1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AWingParams {
    pub omega: f64,
    pub epsilon: f64,
    pub theta: f64,
    pub alpha: f64,
}

impl Default for AWingParams {
    fn default() -> Self {
        AWingParams {
            omega: 8.0,
            epsilon: 1.0,
            theta: 0.5,
            alpha: 2.1,
        }
    }
}

impl AWingParams {
    pub fn new(omega: f64, epsilon: f64, theta: f64, alpha: f64) -> Result<Self> {
        if omega <= 0.0 || epsilon <= 0.0 || theta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "omega, epsilon, theta must be > 0 (got {omega}, {epsilon}, {theta})"
            )));
        }
        if alpha <= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "alpha must exceed 1 so that alpha - y > 0 for targets in [0, 1] (got {alpha})"
            )));
        }
        Ok(AWingParams {
            omega,
            epsilon,
            theta,
            alpha,
        })
    }

    /// Adaptive slope of the linear branch for target `y`.
    pub fn a_term(&self, y: f64) -> f64 {
        let e = self.alpha - y;
        let r = self.theta / self.epsilon;
        self.omega * (1.0 / (1.0 + r.powf(e))) * e * r.powf(e - 1.0) / self.epsilon
    }

    /// Offset making the two branches continuous at |y - yhat| = theta.
    pub fn c_term(&self, y: f64) -> f64 {
        let r = self.theta / self.epsilon;
        self.theta * self.a_term(y) - self.omega * (1.0 + r.powf(self.alpha - y)).ln()
    }
}

/// Loss reduction over voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
    None,
}

/// Reduced or per-voxel loss values.
#[derive(Debug, Clone, PartialEq)]
pub enum LossValue {
    Scalar(f64),
    PerVoxel(VoxelTensor),
}

impl LossValue {
    pub fn scalar(&self) -> f64 {
        match self {
            LossValue::Scalar(x) => *x,
            LossValue::PerVoxel(_) => panic!("loss was computed with Reduction::None"),
        }
    }
}

fn check_shapes(y: &VoxelTensor, yhat: &VoxelTensor) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {:?} vs {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    Ok(())
}

/// ReLU followed by division by the global maximum of the ReLU output.
/// All-nonpositive input maps to all zeros; otherwise the output lies in
/// [0, 1] with maximum exactly 1.
pub fn norm_relu(x: &VoxelTensor) -> VoxelTensor {
    let relu: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
    let max = relu.iter().cloned().fold(0.0f64, f64::max);
    let data = if max == 0.0 {
        relu
    } else {
        relu.into_iter().map(|v| v / max).collect()
    };
    VoxelTensor {
        data,
        shape: x.shape().to_vec(),
    }
}

fn awing_voxel(y: f64, yhat: f64, p: &AWingParams) -> f64 {
    let d = y - yhat;
    if d.abs() < p.theta {
        p.omega * (1.0 + (d / p.epsilon).abs().powf(p.alpha - y)).ln()
    } else {
        p.a_term(y) * d.abs() - p.c_term(y)
    }
}

/// Adaptive wing loss. Targets must lie in [0, 1]; shapes must match.
pub fn awing_loss(
    y: &VoxelTensor,
    yhat: &VoxelTensor,
    p: &AWingParams,
    reduction: Reduction,
) -> Result<LossValue> {
    check_shapes(y, yhat)?;
    if let Some(bad) = y.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "target value {bad} outside [0, 1]"
        )));
    }
    let per: Vec<f64> = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(&t, &h)| awing_voxel(t, h, p))
        .collect();
    Ok(match reduction {
        Reduction::Sum => LossValue::Scalar(per.iter().sum()),
        Reduction::Mean => LossValue::Scalar(per.iter().sum::<f64>() / per.len().max(1) as f64),
        Reduction::None => LossValue::PerVoxel(VoxelTensor {
            data: per,
            shape: y.shape().to_vec(),
        }),
    })
}

/// Analytic d(loss)/d(yhat) per voxel. On the linear branch this is
/// -A(y) * sign(d); d = 0 returns 0.
pub fn awing_grad(y: &VoxelTensor, yhat: &VoxelTensor, p: &AWingParams) -> Result<VoxelTensor> {
    check_shapes(y, yhat)?;
    let data: Vec<f64> = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(&t, &h)| {
            let d = t - h;
            if d == 0.0 {
                return 0.0;
            }
            let sign = d.signum();
            let e = p.alpha - t;
            if d.abs() < p.theta {
                let u = (d / p.epsilon).abs();
                -p.omega * e * u.powf(e - 1.0) * sign / (p.epsilon * (1.0 + u.powf(e)))
            } else {
                -p.a_term(t) * sign
            }
        })
        .collect();
    Ok(VoxelTensor {
        data,
        shape: y.shape().to_vec(),
    })
}

/// Soft Dice loss 1 - (2*sum(y*yhat) + s) / (sum(y) + sum(yhat) + s) with
/// smoothing s = 1e-5.
pub fn soft_dice_loss(y: &VoxelTensor, yhat: &VoxelTensor) -> Result<f64> {
    check_shapes(y, yhat)?;
    const SMOOTH: f64 = 1e-5;
    let mut inter = 0.0;
    let mut sy = 0.0;
    let mut sh = 0.0;
    for (&t, &h) in y.data().iter().zip(yhat.data()) {
        inter += t * h;
        sy += t;
        sh += h;
    }
    Ok(1.0 - (2.0 * inter + SMOOTH) / (sy + sh + SMOOTH))
}
