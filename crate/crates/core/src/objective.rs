//! Training losses on elevation maps, each with its gradient with respect to
//! the prediction.
//!
//! Differences are forward differences along rows and along columns; an
//! axis of length 1 contributes nothing. Where `|x|` is not differentiable
//! the subgradient 0 is used.

use ndarray::{s, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::mapspace::{ElevationMap, OverlapMask};

/// Weights of the gradient-matching, temporal, and total-variation terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mu: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mu: 1.0,
            lambda: 0.05,
            gamma: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.mu, self.lambda, self.gamma]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(config_err(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Smooth-L1 transition point in meters.
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recons: f64,
    pub grad: f64,
    pub tc: f64,
    pub tv: f64,
    pub total: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(config_err(format!(
            "map shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean smooth-L1 of `gt - pred` and its gradient.
pub fn recons_with_grad(
    pred: &Array2<f64>,
    gt: &Array2<f64>,
    beta: f64,
) -> Result<(f64, Array2<f64>)> {
    same_shape(pred, gt)?;
    let n = pred.len() as f64;
    let mut g = Array2::zeros(pred.dim());
    let mut sum = 0.0;
    Zip::from(&mut g).and(pred).and(gt).for_each(|g, &p, &t| {
        let e = p - t;
        if e.abs() < beta {
            sum += 0.5 * e * e / beta;
            *g = e / beta / n;
        } else {
            sum += e.abs() - 0.5 * beta;
            *g = sign(e) / n;
        }
    });
    Ok((sum / n, g))
}

/// Mean absolute forward difference of `x` along each axis, summed, and its
/// gradient with respect to `x`.
fn abs_diff_with_grad(x: &Array2<f64>) -> (f64, Array2<f64>) {
    let (rows, cols) = x.dim();
    let mut g = Array2::zeros(x.dim());
    let mut total = 0.0;
    if rows > 1 {
        let n = ((rows - 1) * cols) as f64;
        let d = &x.slice(s![1.., ..]) - &x.slice(s![..-1, ..]);
        total += d.iter().map(|v| v.abs()).sum::<f64>() / n;
        let sg = d.mapv(|v| sign(v) / n);
        g.slice_mut(s![1.., ..]).zip_mut_with(&sg, |a, b| *a += b);
        g.slice_mut(s![..-1, ..]).zip_mut_with(&sg, |a, b| *a -= b);
    }
    if cols > 1 {
        let n = (rows * (cols - 1)) as f64;
        let d = &x.slice(s![.., 1..]) - &x.slice(s![.., ..-1]);
        total += d.iter().map(|v| v.abs()).sum::<f64>() / n;
        let sg = d.mapv(|v| sign(v) / n);
        g.slice_mut(s![.., 1..]).zip_mut_with(&sg, |a, b| *a += b);
        g.slice_mut(s![.., ..-1]).zip_mut_with(&sg, |a, b| *a -= b);
    }
    (total, g)
}

/// Gradient-matching loss on the residual `gt - pred`.
pub fn grad_with_grad(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    same_shape(pred, gt)?;
    let residual = gt - pred;
    let (v, g) = abs_diff_with_grad(&residual);
    Ok((v, -g))
}

/// Anisotropic total variation of the prediction.
pub fn tv_with_grad(pred: &Array2<f64>) -> (f64, Array2<f64>) {
    abs_diff_with_grad(pred)
}

/// Mean `|pred - prev|` over overlap cells; 0 when the overlap is empty.
pub fn tc_with_grad(
    pred: &Array2<f64>,
    prev: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<(f64, Array2<f64>)> {
    same_shape(pred, prev)?;
    if mask.dim() != pred.dim() {
        return Err(config_err("overlap mask shape differs from the map"));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut g = Array2::zeros(pred.dim());
    if count == 0 {
        return Ok((0.0, g));
    }
    let n = count as f64;
    let mut sum = 0.0;
    Zip::from(&mut g)
        .and(pred)
        .and(prev)
        .and(mask)
        .for_each(|g, &p, &q, &m| {
            if m {
                sum += (p - q).abs();
                *g = sign(p - q) / n;
            }
        });
    Ok((sum / n, g))
}

/// Previous prediction aligned into the current frame, with its overlap.
pub struct TemporalTarget<'a> {
    pub values: &'a Array2<f64>,
    pub mask: &'a Array2<bool>,
}

/// Weighted sum of all terms and its gradient. Without a temporal target
/// the temporal term is 0.
pub fn total_with_grad(
    pred: &Array2<f64>,
    gt: &Array2<f64>,
    temporal: Option<TemporalTarget<'_>>,
    weights: &LossWeights,
    beta: f64,
) -> Result<(LossBreakdown, Array2<f64>)> {
    let (recons, mut g) = recons_with_grad(pred, gt, beta)?;
    let (grad, gg) = grad_with_grad(pred, gt)?;
    g.scaled_add(weights.mu, &gg);
    let tc = match temporal {
        Some(t) => {
            let (v, gt_) = tc_with_grad(pred, t.values, t.mask)?;
            g.scaled_add(weights.lambda, &gt_);
            v
        }
        None => 0.0,
    };
    let (tv, gv) = tv_with_grad(pred);
    g.scaled_add(weights.gamma, &gv);
    let total = recons + weights.mu * grad + weights.lambda * tc + weights.gamma * tv;
    Ok((
        LossBreakdown {
            recons,
            grad,
            tc,
            tv,
            total,
        },
        g,
    ))
}

pub fn loss_recons(pred: &ElevationMap, gt: &ElevationMap) -> Result<f64> {
    pred.ensure_same_grid(gt)?;
    Ok(recons_with_grad(&pred.values, &gt.values, DEFAULT_BETA)?.0)
}

pub fn loss_grad(pred: &ElevationMap, gt: &ElevationMap) -> Result<f64> {
    pred.ensure_same_grid(gt)?;
    Ok(grad_with_grad(&pred.values, &gt.values)?.0)
}

pub fn loss_tc(
    pred: &ElevationMap,
    prev_aligned: &ElevationMap,
    mask: &OverlapMask,
) -> Result<f64> {
    pred.ensure_same_grid(prev_aligned)?;
    Ok(tc_with_grad(&pred.values, &prev_aligned.values, &mask.mask)?.0)
}

pub fn loss_tv(pred: &ElevationMap) -> f64 {
    tv_with_grad(&pred.values).0
}

pub fn loss_total(
    pred: &ElevationMap,
    gt: &ElevationMap,
    prev: Option<(&ElevationMap, &OverlapMask)>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    pred.ensure_same_grid(gt)?;
    let temporal = match prev {
        Some((p, m)) => {
            pred.ensure_same_grid(p)?;
            Some(TemporalTarget {
                values: &p.values,
                mask: &m.mask,
            })
        }
        None => None,
    };
    Ok(total_with_grad(&pred.values, &gt.values, temporal, weights, DEFAULT_BETA)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapspace::{GridSpec, VehiclePose};
    use ndarray::array;

    fn map(values: Array2<f64>) -> ElevationMap {
        let g = GridSpec::new(values.nrows(), values.ncols(), 1.0).unwrap();
        ElevationMap::new(g, values, VehiclePose::level(0.0, 0.0, 0.0, 0.0), 0.0).unwrap()
    }

    #[test]
    fn smooth_l1_branches() {
        let gt = Array2::zeros((3, 3));
        assert_eq!(recons_with_grad(&gt, &gt, 1.0).unwrap().0, 0.0);
        let half = Array2::from_elem((3, 3), 0.5);
        assert!((recons_with_grad(&half, &gt, 1.0).unwrap().0 - 0.125).abs() < 1e-15);
        let three = Array2::from_elem((3, 3), -3.0);
        assert!((recons_with_grad(&three, &gt, 1.0).unwrap().0 - 2.5).abs() < 1e-15);
    }

    #[test]
    fn grad_loss_ramp_and_bias() {
        let gt = Array2::from_shape_fn((4, 4), |(_, j)| 0.1 * j as f64);
        let zero = Array2::zeros((4, 4));
        assert!((grad_with_grad(&zero, &gt).unwrap().0 - 0.1).abs() < 1e-15);
        // swap symmetry
        assert_eq!(
            grad_with_grad(&gt, &zero).unwrap().0,
            grad_with_grad(&zero, &gt).unwrap().0
        );
        let biased = &gt + 7.0;
        assert!(grad_with_grad(&biased, &gt).unwrap().0.abs() < 1e-14);
    }

    #[test]
    fn tv_checkerboard() {
        assert_eq!(tv_with_grad(&array![[0.0, 1.0], [1.0, 0.0]]).0, 2.0);
        assert_eq!(tv_with_grad(&Array2::from_elem((3, 5), 2.0)).0, 0.0);
        let ramp = Array2::from_shape_fn((5, 6), |(_, j)| 0.3 * j as f64);
        assert!((tv_with_grad(&ramp).0 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn tc_masked_mean() {
        let pred = Array2::from_elem((4, 4), 1.2);
        let prev = Array2::from_elem((4, 4), 1.0);
        let mut mask = Array2::from_elem((4, 4), false);
        for k in 0..10 {
            mask[(k / 4, k % 4)] = true;
        }
        assert!((tc_with_grad(&pred, &prev, &mask).unwrap().0 - 0.2).abs() < 1e-15);
        let empty = Array2::from_elem((4, 4), false);
        let (v, g) = tc_with_grad(&pred, &prev, &empty).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_weights_reduce_to_recons() {
        let pred = array![[0.3, -0.2], [1.7, 0.0]];
        let gt = array![[0.0, 0.5], [0.1, 2.0]];
        let w = LossWeights {
            mu: 0.0,
            lambda: 0.0,
            gamma: 0.0,
        };
        let (b, _) = total_with_grad(&pred, &gt, None, &w, 1.0).unwrap();
        assert_eq!(b.total, recons_with_grad(&pred, &gt, 1.0).unwrap().0);
    }

    #[test]
    fn map_wrappers_check_grids() {
        let a = map(Array2::zeros((3, 3)));
        let b = map(Array2::zeros((3, 4)));
        assert!(loss_recons(&a, &b).is_err());
        assert!(loss_grad(&a, &b).is_err());
        assert_eq!(loss_tv(&a), 0.0);
        let w = LossWeights::default();
        assert_eq!(
            loss_total(&a, &a, Some((&a, &OverlapMask::full(a.grid))), &w)
                .unwrap()
                .total,
            0.0
        );
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights {
            mu: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
