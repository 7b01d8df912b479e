//! Fuzzy dice, generator and discriminator losses.
//!
//! The array-level functions evaluate the same graph ops the trainer
//! differentiates, so reported and optimized values agree.

use std::sync::Arc;

use autoseg_nn::{Graph, NodeId};
use ndarray::{ArrayD, ArrayViewD};

use crate::error::{Error, Result};

pub const EPS_LOG: f64 = 1e-7;
pub const EPS_DICE: f64 = 1.0;

fn same_shape(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    if a.is_empty() || a[0] == 0 {
        return Err(Error::Shape(format!("{what}: expected a non-empty batch, got {a:?}")));
    }
    Ok(())
}

/// Nodes of the generator objective.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub total: NodeId,
    pub dice: NodeId,
    pub adversarial: Option<NodeId>,
}

/// `adv + lambda * dice`, with `adv = mean(-ln(max(d_fake, eps_log)))`.
/// Without `d_fake` only the weighted dice term is built.
pub fn generator_terms(
    g: &mut Graph,
    d_fake: Option<NodeId>,
    pred: NodeId,
    target: Arc<ArrayD<f64>>,
    lambda: f64,
    eps_log: f64,
    eps_dice: f64,
) -> GeneratorTerms {
    let dice = g.dice_loss(pred, target, eps_dice);
    let weighted = g.scale(dice, lambda);
    match d_fake {
        Some(d) => {
            let adv = g.neg_log_mean(d, false, eps_log);
            GeneratorTerms {
                total: g.add(adv, weighted),
                dice,
                adversarial: Some(adv),
            }
        }
        None => GeneratorTerms {
            total: weighted,
            dice,
            adversarial: None,
        },
    }
}

/// `mean(-ln(max(d_real, eps))) + mean(-ln(max(1 - d_fake, eps)))`.
pub fn discriminator_terms(g: &mut Graph, d_real: NodeId, d_fake: NodeId, eps_log: f64) -> NodeId {
    let real = g.neg_log_mean(d_real, false, eps_log);
    let fake = g.neg_log_mean(d_fake, true, eps_log);
    g.add(real, fake)
}

pub fn dice_loss(pred: ArrayViewD<f64>, target: ArrayViewD<f64>, eps_dice: f64) -> Result<f64> {
    same_shape("dice_loss", pred.shape(), target.shape())?;
    let mut g = Graph::new();
    let p = g.input(pred.to_owned());
    let l = g.dice_loss(p, Arc::new(target.to_owned()), eps_dice);
    Ok(g.scalar(l))
}

pub fn generator_loss(
    d_fake: ArrayViewD<f64>,
    pred: ArrayViewD<f64>,
    target: ArrayViewD<f64>,
    lambda: f64,
    eps_log: f64,
    eps_dice: f64,
) -> Result<f64> {
    same_shape("generator_loss", pred.shape(), target.shape())?;
    let mut g = Graph::new();
    let d = g.input(d_fake.to_owned());
    let p = g.input(pred.to_owned());
    let t = generator_terms(&mut g, Some(d), p, Arc::new(target.to_owned()), lambda, eps_log, eps_dice);
    Ok(g.scalar(t.total))
}

pub fn discriminator_loss(d_real: ArrayViewD<f64>, d_fake: ArrayViewD<f64>, eps_log: f64) -> Result<f64> {
    same_shape("discriminator_loss", d_real.shape(), d_fake.shape())?;
    let mut g = Graph::new();
    let r = g.input(d_real.to_owned());
    let f = g.input(d_fake.to_owned());
    let l = discriminator_terms(&mut g, r, f, eps_log);
    Ok(g.scalar(l))
}
