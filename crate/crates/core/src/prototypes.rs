//! Class prototypes: creation by per-class mean, nearest-prototype
//! classification in L2, and support-count-weighted fusion.

use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};
use std::collections::BTreeMap;

/// Mean embedding of one class plus the number of embeddings behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub class_id: usize,
    pub vector: Vec<f64>,
    pub support_count: usize,
}

/// At most one prototype per class, all with the same embedding dim.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: BTreeMap<usize, Prototype>,
    pub embedding_dim: usize,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.prototypes.keys().copied().collect()
    }
}

/// Per-class arithmetic mean of the labeled embeddings.
pub fn compute_prototypes(embeddings: &[(Vec<f64>, usize)]) -> Result<PrototypeSet> {
    if embeddings.is_empty() {
        return Err(Error::Empty("prototype embeddings"));
    }
    let dim = embeddings[0].0.len();
    if embeddings.iter().any(|(v, _)| v.len() != dim) {
        return Err(Error::Shape("embedding dims differ".into()));
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (v, label) in embeddings {
        let entry = sums.entry(*label).or_insert_with(|| (vec![0.0; dim], 0));
        for (acc, x) in entry.0.iter_mut().zip(v) {
            *acc += x;
        }
        entry.1 += 1;
    }
    let prototypes = sums
        .into_iter()
        .map(|(class_id, (mut sum, count))| {
            for s in &mut sum {
                *s /= count as f64;
            }
            (
                class_id,
                Prototype {
                    class_id,
                    vector: sum,
                    support_count: count,
                },
            )
        })
        .collect();
    Ok(PrototypeSet {
        prototypes,
        embedding_dim: dim,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest prototype in Euclidean distance. Ties break toward the lowest
/// class index. Returns the prediction and per-class distances for
/// diagnostics.
pub fn nearest_prototype(
    query: &[f64],
    protos: &PrototypeSet,
) -> Result<(usize, Vec<(usize, f64)>)> {
    if protos.is_empty() {
        return Err(Error::Empty("prototype set"));
    }
    if query.len() != protos.embedding_dim {
        return Err(Error::Shape(format!(
            "query dim {} vs prototypes {}",
            query.len(),
            protos.embedding_dim
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    let mut distances = Vec::with_capacity(protos.len());
    // Argmin runs on squared distances; the reported values take the root.
    for (&class, proto) in &protos.prototypes {
        let d2 = squared_distance(query, &proto.vector);
        distances.push((class, d2.sqrt()));
        match best {
            // Strict < plus ascending class iteration implements the tie rule.
            Some((_, bd)) if d2 >= bd => {}
            _ => best = Some((class, d2)),
        }
    }
    Ok((best.expect("non-empty set").0, distances))
}

/// Support-count-weighted mean of the contributing prototypes, per class;
/// counts add up. Computed anchored at the first contributor so a single
/// contributor passes through bit-identically.
pub fn fuse_prototypes(sets: &[PrototypeSet]) -> Result<PrototypeSet> {
    let non_empty: Vec<&PrototypeSet> = sets.iter().filter(|s| !s.is_empty()).collect();
    if non_empty.is_empty() {
        return Err(Error::Empty("prototype sets"));
    }
    let dim = non_empty[0].embedding_dim;
    if non_empty.iter().any(|s| s.embedding_dim != dim) {
        return Err(Error::Shape("prototype set dims differ".into()));
    }
    let mut grouped: BTreeMap<usize, Vec<&Prototype>> = BTreeMap::new();
    for set in &non_empty {
        for proto in set.prototypes.values() {
            if proto.vector.len() != dim {
                return Err(Error::Shape("prototype dim".into()));
            }
            grouped.entry(proto.class_id).or_default().push(proto);
        }
    }
    let mut prototypes = BTreeMap::new();
    for (class_id, contributors) in grouped {
        let total: usize = contributors.iter().map(|p| p.support_count).sum();
        if total == 0 {
            return Err(Error::ZeroWeight);
        }
        let anchor = &contributors[0].vector;
        let mut fused = anchor.clone();
        for d in 0..dim {
            let mut weighted_offset = 0.0;
            for p in &contributors {
                weighted_offset += p.support_count as f64 * (p.vector[d] - anchor[d]);
            }
            fused[d] += weighted_offset / total as f64;
        }
        prototypes.insert(
            class_id,
            Prototype {
                class_id,
                vector: fused,
                support_count: total,
            },
        );
    }
    Ok(PrototypeSet {
        prototypes,
        embedding_dim: dim,
    })
}

pub fn encode_prototype_set(set: &PrototypeSet) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_u32(set.embedding_dim as u32);
    w.put_u32(set.prototypes.len() as u32);
    for proto in set.prototypes.values() {
        w.put_u32(proto.class_id as u32);
        w.put_u64(proto.support_count as u64);
        for v in &proto.vector {
            w.put_f64(*v);
        }
    }
    w.into_bytes()
}

pub fn decode_prototype_set(bytes: &[u8]) -> Result<PrototypeSet> {
    let mut r = ByteReader::new(bytes);
    let set = take_prototype_set(&mut r)?;
    r.finish()?;
    Ok(set)
}

pub(crate) fn take_prototype_set(r: &mut ByteReader) -> Result<PrototypeSet> {
    let dim = r.take_u32()? as usize;
    let count = r.take_u32()? as usize;
    let mut prototypes = BTreeMap::new();
    for _ in 0..count {
        let class_id = r.take_u32()? as usize;
        let support_count = r.take_u64()? as usize;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            vector.push(r.take_f64()?);
        }
        if prototypes
            .insert(
                class_id,
                Prototype {
                    class_id,
                    vector,
                    support_count,
                },
            )
            .is_some()
        {
            return Err(Error::Decode(format!("duplicate prototype class {class_id}")));
        }
    }
    Ok(PrototypeSet {
        prototypes,
        embedding_dim: dim,
    })
}

/// CSV export (class, support count, vector columns) for external
/// projection tools.
pub fn prototype_set_csv(set: &PrototypeSet) -> String {
    let mut out = String::from("class_id,support_count");
    for d in 0..set.embedding_dim {
        out.push_str(&format!(",e{d}"));
    }
    out.push('\n');
    for proto in set.prototypes.values() {
        out.push_str(&format!("{},{}", proto.class_id, proto.support_count));
        for v in &proto.vector {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
