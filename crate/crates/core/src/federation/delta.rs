//! Weight deltas between a baseline and the current global model.
//!
//! Deltas are XORs of the f64 bit patterns, grouped per parameter group;
//! groups that did not change are omitted entirely. Applying a delta to
//! the baseline therefore reconstructs the current model byte-exactly,
//! and after adapter-only aggregation the delta carries just the
//! adaptation group.

use crate::error::{Error, Result};
use crate::model::{AdaptationParams, ModelParams};

/// Parameter group addressed by a delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupTag {
    Extractor = 0,
    Adaptation = 1,
    Classifier = 2,
}

impl GroupTag {
    pub const ALL: [GroupTag; 3] = [GroupTag::Extractor, GroupTag::Adaptation, GroupTag::Classifier];

    pub fn from_u8(v: u8) -> Result<GroupTag> {
        match v {
            0 => Ok(GroupTag::Extractor),
            1 => Ok(GroupTag::Adaptation),
            2 => Ok(GroupTag::Classifier),
            other => Err(Error::Decode(format!("unknown group tag {other}"))),
        }
    }
}

/// XOR bit patterns for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDelta {
    pub group: GroupTag,
    pub bits: Vec<u64>,
}

/// Canonical flat order of the adaptation group: W row-major, b, gamma,
/// beta, mu, sigma, bn_momentum, bn_epsilon.
pub fn adaptation_values(psi: &AdaptationParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(psi.dim() * psi.dim() + 4 * psi.dim() + 3);
    out.extend_from_slice(psi.w.data());
    out.push(psi.b);
    out.extend_from_slice(&psi.gamma);
    out.extend_from_slice(&psi.beta);
    out.extend_from_slice(&psi.mu);
    out.extend_from_slice(&psi.sigma);
    out.push(psi.bn_momentum);
    out.push(psi.bn_epsilon);
    out
}

pub fn set_adaptation_values(psi: &mut AdaptationParams, values: &[f64]) -> Result<()> {
    let m = psi.dim();
    let expected = m * m + 4 * m + 3;
    if values.len() != expected {
        return Err(Error::Shape(format!(
            "adaptation group expects {expected} values, got {}",
            values.len()
        )));
    }
    let mut it = values.iter();
    for v in psi.w.data_mut() {
        *v = *it.next().unwrap();
    }
    psi.b = *it.next().unwrap();
    for dst in [&mut psi.gamma, &mut psi.beta, &mut psi.mu, &mut psi.sigma] {
        for v in dst.iter_mut() {
            *v = *it.next().unwrap();
        }
    }
    psi.bn_momentum = *it.next().unwrap();
    psi.bn_epsilon = *it.next().unwrap();
    Ok(())
}

fn group_values(params: &ModelParams, tag: GroupTag) -> Vec<f64> {
    match tag {
        GroupTag::Extractor => {
            let mut out = Vec::new();
            for layer in &params.phi.layers {
                out.extend_from_slice(layer.weights.data());
                out.extend_from_slice(&layer.bias);
            }
            out
        }
        GroupTag::Adaptation => adaptation_values(&params.psi),
        GroupTag::Classifier => {
            let mut out = Vec::with_capacity(
                params.nu.weights.data().len() + params.nu.bias.len(),
            );
            out.extend_from_slice(params.nu.weights.data());
            out.extend_from_slice(&params.nu.bias);
            out
        }
    }
}

fn set_group_values(params: &mut ModelParams, tag: GroupTag, values: &[f64]) -> Result<()> {
    match tag {
        GroupTag::Extractor => {
            let mut it = values.iter();
            for layer in &mut params.phi.layers {
                for v in layer.weights.data_mut() {
                    *v = *it.next().ok_or_else(|| Error::Shape("extractor delta short".into()))?;
                }
                for v in &mut layer.bias {
                    *v = *it.next().ok_or_else(|| Error::Shape("extractor delta short".into()))?;
                }
            }
            if it.next().is_some() {
                return Err(Error::Shape("extractor delta long".into()));
            }
            Ok(())
        }
        GroupTag::Adaptation => set_adaptation_values(&mut params.psi, values),
        GroupTag::Classifier => {
            let w_len = params.nu.weights.data().len();
            if values.len() != w_len + params.nu.bias.len() {
                return Err(Error::Shape("classifier delta size".into()));
            }
            params.nu.weights.data_mut().copy_from_slice(&values[..w_len]);
            params.nu.bias.copy_from_slice(&values[w_len..]);
            Ok(())
        }
    }
}

/// True when the two snapshots have the same tensor shapes.
pub fn structure_matches(a: &ModelParams, b: &ModelParams) -> bool {
    a.phi.layers.len() == b.phi.layers.len()
        && a.phi
            .layers
            .iter()
            .zip(&b.phi.layers)
            .all(|(x, y)| {
                x.weights.rows() == y.weights.rows() && x.weights.cols() == y.weights.cols()
            })
        && a.psi.dim() == b.psi.dim()
        && a.nu.weights.rows() == b.nu.weights.rows()
        && a.nu.weights.cols() == b.nu.weights.cols()
}

/// Delta from `baseline` to `current`; unchanged groups are omitted.
pub fn make_delta(baseline: &ModelParams, current: &ModelParams) -> Result<Vec<GroupDelta>> {
    if !structure_matches(baseline, current) {
        return Err(Error::Shape("delta between different architectures".into()));
    }
    let mut groups = Vec::new();
    for tag in GroupTag::ALL {
        let base = group_values(baseline, tag);
        let cur = group_values(current, tag);
        let bits: Vec<u64> = base
            .iter()
            .zip(&cur)
            .map(|(b, c)| b.to_bits() ^ c.to_bits())
            .collect();
        if bits.iter().any(|&b| b != 0) {
            groups.push(GroupDelta { group: tag, bits });
        }
    }
    Ok(groups)
}

/// Reconstruct the current model from the baseline plus a delta,
/// byte-exactly.
pub fn apply_delta(baseline: &ModelParams, groups: &[GroupDelta]) -> Result<ModelParams> {
    let mut out = baseline.clone();
    for delta in groups {
        let base = group_values(baseline, delta.group);
        if base.len() != delta.bits.len() {
            return Err(Error::Shape(format!(
                "delta group {:?}: {} entries vs {} parameters",
                delta.group,
                delta.bits.len(),
                base.len()
            )));
        }
        let patched: Vec<f64> = base
            .iter()
            .zip(&delta.bits)
            .map(|(v, bits)| f64::from_bits(v.to_bits() ^ bits))
            .collect();
        set_group_values(&mut out, delta.group, &patched)?;
    }
    Ok(out)
}
