//! The three training objectives, as closed forms and as graph builders.
//!
//! The closed forms are the reference values; the graph builders must agree
//! with them to rounding and are what training differentiates.

use crate::autodiff::{sigmoid, Graph, NodeId};
use crate::Result;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Squared-hinge contrastive loss: `D²` for a matching pair, otherwise
/// `max(margin − D, 0)²`.
pub fn contrastive_loss(distance: f64, label: u8, margin: f64) -> f64 {
    if label == 1 {
        distance * distance
    } else {
        let gap = (margin - distance).max(0.0);
        gap * gap
    }
}

/// `max(d(a, p) − d(a, n) + margin, 0)`.
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Binary cross-entropy of a probability against a 0/1 label.
pub fn bce_loss(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Match probability of the similarity head, `σ(a·cos + b)`.
pub fn head_probability(cosine: f64, scale: f64, bias: f64) -> f64 {
    sigmoid(scale * cosine + bias)
}

/// BCE of the similarity head applied to two embeddings.
pub fn bce_similarity_loss(u: &[f64], v: &[f64], label: u8, scale: f64, bias: f64) -> f64 {
    let cos = crate::autodiff::cosine(u, v);
    bce_loss(head_probability(cos, scale, bias), label)
}

pub fn contrastive_node(g: &mut Graph<'_>, u: NodeId, v: NodeId, label: u8, margin: f64) -> Result<NodeId> {
    let d = g.euclidean_distance(u, v)?;
    if label == 1 {
        Ok(g.square(d))
    } else {
        let neg = g.scale(d, -1.0);
        let gap = g.add_scalar(neg, margin);
        let hinge = g.relu(gap);
        Ok(g.square(hinge))
    }
}

pub fn triplet_node(g: &mut Graph<'_>, anchor: NodeId, positive: NodeId, negative: NodeId, margin: f64) -> Result<NodeId> {
    let d_ap = g.euclidean_distance(anchor, positive)?;
    let d_an = g.euclidean_distance(anchor, negative)?;
    let diff = g.sub(d_ap, d_an)?;
    let shifted = g.add_scalar(diff, margin);
    Ok(g.relu(shifted))
}

/// `σ(scale·cos(u, v) + bias)` where `scale` and `bias` are scalar nodes.
pub fn head_node(g: &mut Graph<'_>, u: NodeId, v: NodeId, scale: NodeId, bias: NodeId) -> Result<NodeId> {
    let cos = g.cosine_similarity(u, v)?;
    let scaled = g.mul(scale, cos)?;
    let z = g.add(scaled, bias)?;
    Ok(g.sigmoid(z))
}

pub fn bce_node(g: &mut Graph<'_>, p: NodeId, label: u8) -> NodeId {
    let target = if label == 1 {
        p
    } else {
        let neg = g.scale(p, -1.0);
        g.add_scalar(neg, 1.0)
    };
    let ln = g.ln_clamped(target, PROB_EPS, 1.0 - PROB_EPS);
    g.scale(ln, -1.0)
}
