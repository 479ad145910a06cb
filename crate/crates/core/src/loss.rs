//! Training loss: two-class Dice loss plus mean binary cross-entropy.
//!
//! The Dice term sums the per-class overlap ratio over foreground and
//! background (the background channel is `(1 - y, 1 - p)`):
//!
//! ```text
//! dice = 1 - sum_k  sum_n y_nk p_nk / (sum_n y_nk + sum_n p_nk)
//! ```
//!
//! Each ratio is at most 1/2, so a perfect prediction scores 0. A class that
//! is empty in both mask and prediction contributes its limiting ratio 1/2.
//!
//! Cross-entropy is the standard `-(y ln p + (1 - y) ln(1 - p))`, averaged
//! over voxels, with `p` clamped to `[1e-7, 1 - 1e-7]`.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BCE_CLAMP: f64 = 1e-7;

/// Loss split into its two terms; `total == dice_term + bce_term`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub dice_term: f64,
    pub bce_term: f64,
}

fn check_pair(y: &Tensor, p: &Tensor) -> Result<()> {
    if y.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            lhs: y.shape().to_vec(),
            rhs: p.shape().to_vec(),
            context: "loss target vs prediction",
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidShape("loss of an empty tensor".into()));
    }
    Ok(())
}

fn check_unit_range(t: &Tensor, what: &str) -> Result<()> {
    match t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::InvalidValue(format!(
            "{what} value {v} lies outside [0, 1]"
        ))),
        None => Ok(()),
    }
}

/// Overlap ratio `I / S` and its derivative with respect to each prediction,
/// for one class given as (mask, prediction) accessors.
fn class_ratio(
    y: &[f64],
    p: &[f64],
    flip: bool,
    grad: Option<&mut [f64]>,
    sign: f64,
) -> f64 {
    let (mut inter, mut total) = (0.0, 0.0);
    for (&yv, &pv) in y.iter().zip(p) {
        let (yk, pk) = if flip { (1.0 - yv, 1.0 - pv) } else { (yv, pv) };
        inter += yk * pk;
        total += yk + pk;
    }
    if total == 0.0 {
        return 0.5;
    }
    if let Some(grad) = grad {
        // d(I/S)/dp_k = (y_k S - I) / S^2; the background class sees dp_k = -dp
        let dir = if flip { -1.0 } else { 1.0 };
        let s2 = total * total;
        for (gv, &yv) in grad.iter_mut().zip(y) {
            let yk = if flip { 1.0 - yv } else { yv };
            *gv += sign * dir * (yk * total - inter) / s2;
        }
    }
    inter / total
}

pub(crate) fn dice_loss_with_grad(y: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; p.len()];
    let fg = class_ratio(y, p, false, Some(&mut grad), -1.0);
    let bg = class_ratio(y, p, true, Some(&mut grad), -1.0);
    (1.0 - fg - bg, grad)
}

pub(crate) fn bce_loss_with_grad(y: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let n = p.len() as f64;
    let mut total = 0.0;
    let grad = y
        .iter()
        .zip(p)
        .map(|(&yv, &pv)| {
            let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln();
            if pv > BCE_CLAMP && pv < 1.0 - BCE_CLAMP {
                (-yv / pc + (1.0 - yv) / (1.0 - pc)) / n
            } else {
                0.0
            }
        })
        .collect();
    (total / n, grad)
}

/// Two-class Dice loss. Both tensors must hold values in `[0, 1]`.
pub fn dice_loss(y: &Tensor, p: &Tensor) -> Result<f64> {
    check_pair(y, p)?;
    check_unit_range(y, "dice target")?;
    check_unit_range(p, "dice prediction")?;
    let fg = class_ratio(y.data(), p.data(), false, None, 0.0);
    let bg = class_ratio(y.data(), p.data(), true, None, 0.0);
    Ok(1.0 - fg - bg)
}

/// Mean binary cross-entropy with clamped predictions.
pub fn bce_loss(y: &Tensor, p: &Tensor) -> Result<f64> {
    check_pair(y, p)?;
    check_unit_range(y, "bce target")?;
    let n = p.len() as f64;
    let total: f64 = y
        .data()
        .iter()
        .zip(p.data())
        .map(|(&yv, &pv)| {
            let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln())
        })
        .sum();
    Ok(total / n)
}

pub fn combined_loss(y: &Tensor, p: &Tensor) -> Result<LossValue> {
    let dice_term = dice_loss(y, p)?;
    let bce_term = bce_loss(y, p)?;
    Ok(LossValue {
        total: dice_term + bce_term,
        dice_term,
        bce_term,
    })
}

/// Adds the combined loss of `pred` against `target` to the graph and returns
/// the scalar loss node together with its value breakdown.
pub fn combined_loss_node(graph: &mut Graph, pred: Var, target: &Tensor) -> Result<(Var, LossValue)> {
    let d = graph.dice_loss(pred, target)?;
    let b = graph.bce_loss(pred, target)?;
    let total = graph.add(d, b)?;
    let dice_term = graph.value(d).item()?;
    let bce_term = graph.value(b).item()?;
    Ok((
        total,
        LossValue {
            total: graph.value(total).item()?,
            dice_term,
            bce_term,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn dice_hand_enumerated_fixture() {
        // fg ratio 1/3, bg ratio 2/5
        let l = dice_loss(&t(&[1.0, 1.0, 0.0, 0.0]), &t(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((l - 4.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn dice_perfect_and_worst() {
        let y = t(&[1.0, 0.0, 1.0, 0.0]);
        assert!(dice_loss(&y, &y).unwrap().abs() < 1e-15);
        let l = dice_loss(&t(&[1.0; 4]), &t(&[0.0; 4])).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        // empty foreground in both: perfect
        let z = t(&[0.0; 4]);
        assert!(dice_loss(&z, &z).unwrap().abs() < 1e-15);
    }

    #[test]
    fn dice_rejects_out_of_range_and_shape() {
        assert!(dice_loss(&t(&[1.0, 2.0]), &t(&[0.5, 0.5])).is_err());
        assert!(dice_loss(&t(&[1.0]), &t(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn bce_examples() {
        let l = bce_loss(&t(&[1.0, 0.0]), &t(&[0.9, 0.2])).unwrap();
        let expected = (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0;
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.16425).abs() < 1e-5);
        let half = bce_loss(&t(&[1.0, 0.0, 1.0]), &t(&[0.5; 3])).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        let y = t(&[1.0, 0.0]);
        assert!(bce_loss(&y, &y).unwrap() < 1e-6);
    }

    #[test]
    fn combined_is_sum_of_terms() {
        let y = t(&[1.0, 1.0, 0.0, 0.0]);
        let p = t(&[1.0, 0.0, 0.0, 0.0]);
        let v = combined_loss(&y, &p).unwrap();
        assert_eq!(v.total, v.dice_term + v.bce_term);
        let perfect = combined_loss(&y, &y).unwrap();
        assert!(perfect.total < 1e-5);
    }

    #[test]
    fn graph_gradient_is_sum_of_term_gradients() {
        let y = t(&[1.0, 0.0, 1.0, 0.0, 0.0]);
        let p = t(&[0.7, 0.2, 0.4, 0.6, 0.1]);
        let (_, gd) = dice_loss_with_grad(y.data(), p.data());
        let (_, gb) = bce_loss_with_grad(y.data(), p.data());
        let mut g = Graph::new();
        let pv = g.parameter(p.clone());
        let (loss, _) = combined_loss_node(&mut g, pv, &y).unwrap();
        let grads = g.backward(loss).unwrap();
        for (i, v) in grads.get(pv).unwrap().data().iter().enumerate() {
            assert!((v - (gd[i] + gb[i])).abs() < 1e-15);
        }
    }
}
