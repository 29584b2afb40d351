use std::collections::{HashMap, HashSet};

use ndarray::Array2;

use super::{DataError, FeatureBundle};
use crate::layout::{validate_layout, LayoutDecl};

/// Joins modality bundles of the same samples into one bundle.
///
/// The first bundle fixes the row order and the part list. Later bundles are
/// aligned by sample id and may cover a subset of its parts (for example the
/// auxiliary body part only exists for skeleton features). Within each part
/// the modality blocks appear in bundle order.
pub fn merge_modalities(bundles: &[FeatureBundle]) -> Result<FeatureBundle, DataError> {
    let (first, rest) = bundles
        .split_first()
        .ok_or_else(|| DataError::InvalidBundle("nothing to merge".into()))?;

    let mut seen_modalities: HashSet<String> = HashSet::new();
    for b in bundles {
        for m in b.layout().modality_ids() {
            if !seen_modalities.insert(m.clone()) {
                return Err(DataError::DuplicateModality(m));
            }
        }
    }

    let ref_parts: Vec<&str> = first
        .layout()
        .parts()
        .iter()
        .map(|p| p.name.as_str())
        .collect();
    let mut row_maps: Vec<HashMap<&str, usize>> = Vec::with_capacity(rest.len());
    for (bi, b) in rest.iter().enumerate() {
        if b.class_names() != first.class_names() {
            return Err(DataError::SampleMismatch(format!(
                "bundle {} has different class names",
                bi + 1
            )));
        }
        if b.num_samples() != first.num_samples() {
            return Err(DataError::SampleMismatch(format!(
                "bundle {} has {} samples, bundle 0 has {}",
                bi + 1,
                b.num_samples(),
                first.num_samples()
            )));
        }
        let map: HashMap<&str, usize> = b
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        for s in first.samples() {
            let &row = map.get(s.id.as_str()).ok_or_else(|| {
                DataError::SampleMismatch(format!(
                    "sample '{}' missing from bundle {}",
                    s.id,
                    bi + 1
                ))
            })?;
            let other = &b.samples()[row];
            if other.label != s.label || other.subject != s.subject {
                return Err(DataError::SampleMismatch(format!(
                    "sample '{}' has different label or subject in bundle {}",
                    s.id,
                    bi + 1
                )));
            }
        }
        let mut names = HashSet::new();
        for p in b.layout().parts() {
            if !ref_parts.contains(&p.name.as_str()) || !names.insert(p.name.as_str()) {
                return Err(DataError::PartStructureMismatch(format!(
                    "part '{}' of bundle {} is not a part of bundle 0",
                    p.name,
                    bi + 1
                )));
            }
        }
        row_maps.push(map);
    }

    // (bundle, source column) for every output column
    let mut sources: Vec<(usize, usize)> = Vec::new();
    let mut parts = Vec::with_capacity(ref_parts.len());
    for name in &ref_parts {
        let mut mods = Vec::new();
        for (bi, b) in bundles.iter().enumerate() {
            if let Some(p) = b.layout().parts().iter().find(|p| p.name == *name) {
                for blk in &p.blocks {
                    mods.push((blk.modality.clone(), blk.len));
                    sources.extend((blk.offset..blk.offset + blk.len).map(|c| (bi, c)));
                }
            }
        }
        parts.push((name.to_string(), mods));
    }
    let layout = validate_layout(LayoutDecl::sequential(parts))?;

    let n = first.num_samples();
    let mut x = Array2::zeros((n, sources.len()));
    for (i, s) in first.samples().iter().enumerate() {
        let rows: Vec<usize> = std::iter::once(i)
            .chain(row_maps.iter().map(|m| m[s.id.as_str()]))
            .collect();
        for (col, &(bi, src)) in sources.iter().enumerate() {
            x[[i, col]] = bundles[bi].x()[[rows[bi], src]];
        }
    }
    let notes = bundles
        .iter()
        .flat_map(|b| b.notes().iter().cloned())
        .collect();
    FeatureBundle::new(
        x,
        layout,
        first.samples().to_vec(),
        first.class_names().to_vec(),
        notes,
    )
}
