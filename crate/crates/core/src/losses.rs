//! Supervised loss, distillation losses, and the combined per-model
//! codistillation objective.
//!
//! All losses are recorded on a [`Tape`]. Peer logits always enter as
//! constants, so the gradient of the objective flows only into the model
//! being updated.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which disagreement penalty `D` to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillKind {
    /// Mean squared error between raw logits, averaged over `B·C` entries.
    #[default]
    Mse,
    /// `KL(softmax(peer) ‖ softmax(self))`, averaged over the batch.
    Kl,
}

/// A loss value with its parts. `scalar == supervised + alpha·distill + lambda·l2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub scalar: f64,
    pub supervised: f64,
    pub distill: f64,
    pub l2: f64,
}

/// Root node of a recorded objective together with its value.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub root: Var,
    pub value: LossValue,
}

fn check_logits(tape: &Tape, logits: Var) -> Result<(usize, usize)> {
    let v = tape.value(logits);
    if v.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "loss",
            left: v.shape().to_vec(),
            right: vec![0, 0],
        });
    }
    Ok((v.rows(), v.cols()))
}

/// Smoothed cross-entropy: mean over the batch of `-Σ_c q_c log softmax(z)_c`
/// with `q = (1-ε)·onehot + ε/C`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize], smoothing: f64) -> Result<Var> {
    let (b, c) = check_logits(tape, logits)?;
    if labels.len() != b {
        return Err(Error::Dimension {
            op: "cross_entropy",
            left: vec![b, c],
            right: vec![labels.len()],
        });
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::contract(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let off = smoothing / c as f64;
    let on = 1.0 - smoothing + off;
    let mut q = vec![off; b * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::contract(format!("label {y} out of range for {c} classes")));
        }
        q[i * c + y] = on;
    }
    let q = tape.constant(Tensor::new(vec![b, c], q)?);
    let ls = tape.log_softmax(logits)?;
    let prod = tape.mul(q, ls)?;
    let total = tape.batch_sum(prod);
    Ok(tape.scale(total, -1.0 / b as f64))
}

fn peer_constant(tape: &mut Tape, logits: Var, peer: &Tensor, op: &'static str) -> Result<Var> {
    let own = tape.value(logits);
    if own.shape() != peer.shape() {
        return Err(Error::Dimension {
            op,
            left: own.shape().to_vec(),
            right: peer.shape().to_vec(),
        });
    }
    Ok(tape.constant(peer.clone()))
}

/// Mean over all `B·C` entries of `(self - peer)²`, uncentered.
pub fn distill_mse(tape: &mut Tape, logits: Var, peer: &Tensor) -> Result<Var> {
    let (b, c) = check_logits(tape, logits)?;
    let p = peer_constant(tape, logits, peer, "distill_mse")?;
    let d = tape.sub(logits, p)?;
    let sq = tape.mul(d, d)?;
    let total = tape.batch_sum(sq);
    Ok(tape.scale(total, 1.0 / (b * c) as f64))
}

/// Batch mean of `KL(softmax(peer) ‖ softmax(self))`.
pub fn distill_kl(tape: &mut Tape, logits: Var, peer: &Tensor) -> Result<Var> {
    let (b, _) = check_logits(tape, logits)?;
    peer_constant(tape, logits, peer, "distill_kl")?;
    let log_p = peer.log_softmax_rows()?;
    let p = tape.constant(log_p.map(f64::exp));
    let log_p = tape.constant(log_p);
    let ls = tape.log_softmax(logits)?;
    let diff = tape.sub(log_p, ls)?;
    let prod = tape.mul(p, diff)?;
    let total = tape.batch_sum(prod);
    Ok(tape.scale(total, 1.0 / b as f64))
}

pub fn distill(tape: &mut Tape, kind: DistillKind, logits: Var, peer: &Tensor) -> Result<Var> {
    match kind {
        DistillKind::Mse => distill_mse(tape, logits, peer),
        DistillKind::Kl => distill_kl(tape, logits, peer),
    }
}

/// `0.5 · Σ w²` over the given weight tensors (callers pass only trainable
/// weights; biases and frozen layers stay out).
pub fn l2_penalty(tape: &mut Tape, weights: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &w in weights {
        let sq = tape.mul(w, w)?;
        let s = tape.sum(sq);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(tape.scale(total, 0.5))
}

/// Hyper-parameters of one evaluation of the combined objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub smoothing: f64,
    pub kind: DistillKind,
}

/// `L(y, f_i(x)) + α·(1/(n-1))·Σ_{j≠i} D(f_i(x), f_j(x)) + λ·l2`.
///
/// An empty `peers` list drops the distillation term (its component is 0).
/// An empty `l2_weights` list drops the penalty.
pub fn codistill_objective(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    peers: &[Tensor],
    l2_weights: &[Var],
    w: ObjectiveWeights,
) -> Result<Objective> {
    let (b, _) = check_logits(tape, logits)?;
    for p in peers {
        if p.shape().first() != Some(&b) {
            return Err(Error::Dimension {
                op: "codistill_objective",
                left: tape.value(logits).shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let sup = cross_entropy(tape, logits, labels, w.smoothing)?;
    let mut root = sup;
    let mut distill_value = 0.0;
    if !peers.is_empty() {
        let mut acc: Option<Var> = None;
        for p in peers {
            let d = distill(tape, w.kind, logits, p)?;
            acc = Some(match acc {
                None => d,
                Some(a) => tape.add(a, d)?,
            });
        }
        let avg = tape.scale(acc.expect("non-empty"), 1.0 / peers.len() as f64);
        distill_value = tape.value(avg).item();
        let weighted = tape.scale(avg, w.alpha);
        root = tape.add(root, weighted)?;
    }
    let mut l2_value = 0.0;
    if !l2_weights.is_empty() {
        let l2 = l2_penalty(tape, l2_weights)?;
        l2_value = tape.value(l2).item();
        let weighted = tape.scale(l2, w.lambda);
        root = tape.add(root, weighted)?;
    }
    let value = LossValue {
        scalar: tape.value(root).item(),
        supervised: tape.value(sup).item(),
        distill: distill_value,
        l2: l2_value,
    };
    Ok(Objective { root, value })
}

/// Value-only cross-entropy.
pub fn cross_entropy_value(logits: &Tensor, labels: &[usize], smoothing: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let l = cross_entropy(&mut tape, z, labels, smoothing)?;
    Ok(tape.value(l).item())
}

/// Value-only distillation loss.
pub fn distill_value(kind: DistillKind, own: &Tensor, peer: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(own.clone());
    let l = distill(&mut tape, kind, z, peer)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_rows(&[v])
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let v = cross_entropy_value(&Tensor::zeros(&[3, 10]), &[0, 4, 9], 0.0).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
        assert!((v - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn saturated_true_class_gives_zero() {
        let v = cross_entropy_value(&row(&[1000.0, 0.0, 0.0]), &[0], 0.0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn smoothed_two_class_hand_value() {
        // q = [0.95, 0.05]; log softmax([1,0]) = [-ln(1+e^-1), -1-ln(1+e^-1)]
        let lse = (1.0f64 + (-1.0f64).exp()).ln();
        let expect = 0.95 * lse + 0.05 * (1.0 + lse);
        let v = cross_entropy_value(&row(&[1.0, 0.0]), &[0], 0.1).unwrap();
        assert!((v - expect).abs() < 1e-14, "{v} vs {expect}");
    }

    #[test]
    fn label_out_of_range_is_contract_error() {
        assert!(matches!(
            cross_entropy_value(&row(&[0.0, 0.0]), &[2], 0.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mse_examples() {
        let a = row(&[1.0, 0.0]);
        let b = row(&[0.0, 1.0]);
        assert_eq!(distill_value(DistillKind::Mse, &a, &a).unwrap(), 0.0);
        assert_eq!(distill_value(DistillKind::Mse, &a, &b).unwrap(), 1.0);
        assert!(distill_value(DistillKind::Mse, &a, &Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn mse_gradient_is_two_diff_over_bc() {
        let mut tape = Tape::new();
        let z = tape.param("z", row(&[1.0, 0.0])).unwrap();
        let l = distill_mse(&mut tape, z, &row(&[0.0, 1.0])).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g["z"].data(), &[1.0, -1.0]);
    }

    #[test]
    fn kl_examples() {
        let a = Tensor::from_rows(&[&[0.3, -1.2, 2.0]]);
        assert!(distill_value(DistillKind::Kl, &a, &a).unwrap().abs() < 1e-15);
        // peer ≈ one-hot, self uniform, C=2: KL = Σ p log(p/0.5) → ln 2
        let v = distill_value(DistillKind::Kl, &row(&[0.0, 0.0]), &row(&[50.0, -50.0])).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn l2_examples() {
        let mut tape = Tape::new();
        let w = tape.param("w", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        let l = l2_penalty(&mut tape, &[w]).unwrap();
        assert_eq!(tape.value(l).item(), 4.5);
        let g = tape.backward(l).unwrap();
        assert_eq!(g["w"].data(), &[3.0]);

        let mut tape = Tape::new();
        let z = tape.param("z", Tensor::zeros(&[2, 2])).unwrap();
        let l = l2_penalty(&mut tape, &[z]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    fn weights(alpha: f64, lambda: f64) -> ObjectiveWeights {
        ObjectiveWeights {
            alpha,
            lambda,
            smoothing: 0.0,
            kind: DistillKind::Mse,
        }
    }

    #[test]
    fn objective_without_alpha_or_lambda_is_cross_entropy() {
        let logits = Tensor::from_rows(&[&[0.2, -0.4, 1.0], &[1.5, 0.0, -2.0]]);
        let labels = [2, 0];
        let mut tape = Tape::new();
        let z = tape.param("z", logits.clone()).unwrap();
        let w = tape.param("w", Tensor::ones(&[2, 2])).unwrap();
        let peer = Tensor::zeros(&[2, 3]);
        let obj = codistill_objective(&mut tape, z, &labels, &[peer], &[w], weights(0.0, 0.0)).unwrap();
        let ce = cross_entropy_value(&logits, &labels, 0.0).unwrap();
        assert_eq!(obj.value.scalar.to_bits(), ce.to_bits());
    }

    #[test]
    fn equal_peers_average_to_one_term() {
        let own = Tensor::from_rows(&[&[0.2, -0.4], &[1.5, 0.0]]);
        let peer = Tensor::from_rows(&[&[1.0, 0.5], &[-0.5, 0.25]]);
        let mut tape = Tape::new();
        let z = tape.param("z", own.clone()).unwrap();
        let obj = codistill_objective(&mut tape, z, &[0, 1], &[peer.clone(), peer.clone()], &[], weights(1.0, 0.0))
            .unwrap();
        assert_eq!(obj.value.distill, distill_value(DistillKind::Mse, &own, &peer).unwrap());
    }

    #[test]
    fn two_model_objective_matches_components() {
        let own = Tensor::from_rows(&[&[2.0, -1.0], &[0.0, 0.5]]);
        let peer = Tensor::from_rows(&[&[1.0, 1.0], &[0.5, -0.5]]);
        let labels = [0, 1];
        let wt = Tensor::from_rows(&[&[1.0, -2.0]]);
        let mut tape = Tape::new();
        let z = tape.param("z", own.clone()).unwrap();
        let w = tape.param("w", wt).unwrap();
        let obj = codistill_objective(&mut tape, z, &labels, &[peer.clone()], &[w], weights(1.0, 0.1)).unwrap();
        let sup = cross_entropy_value(&own, &labels, 0.0).unwrap();
        let d = distill_value(DistillKind::Mse, &own, &peer).unwrap();
        // diffs (1, -2, -0.5, 1): (1+4+0.25+1)/4 = 1.5625 ; 0.5·(1+4) = 2.5
        assert_eq!(d, 1.5625);
        assert_eq!(obj.value.supervised, sup);
        assert_eq!(obj.value.distill, d);
        assert_eq!(obj.value.l2, 2.5);
        assert_eq!(obj.value.scalar, sup + 1.0 * d + 0.1 * 2.5);
    }

    #[test]
    fn empty_peer_list_omits_distillation() {
        let own = Tensor::from_rows(&[&[2.0, -1.0]]);
        let mut tape = Tape::new();
        let z = tape.param("z", own).unwrap();
        let obj = codistill_objective(&mut tape, z, &[1], &[], &[], weights(5.0, 0.0)).unwrap();
        assert_eq!(obj.value.distill, 0.0);
        assert_eq!(obj.value.scalar, obj.value.supervised);
    }

    #[test]
    fn mismatched_peer_batch_is_dimension_error() {
        let mut tape = Tape::new();
        let z = tape.param("z", Tensor::zeros(&[2, 2])).unwrap();
        let res = codistill_objective(&mut tape, z, &[0, 1], &[Tensor::zeros(&[3, 2])], &[], weights(1.0, 0.0));
        assert!(matches!(res, Err(Error::Dimension { .. })));
    }
}
