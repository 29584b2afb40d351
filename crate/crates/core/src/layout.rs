//! Hierarchical feature partitions.
//!
//! A [`FeatureLayout`] splits a `d`-dimensional feature vector into parts
//! (body joints plus optional auxiliary parts) and, within each part, into
//! modality blocks (skeleton, LOP, HON4D, ...). Every block is a contiguous
//! index range and the blocks tile `[0, d)` exactly once. The norms and
//! objectives only ever see a layout that went through [`validate_layout`].

use std::fmt;
use std::ops::Range;

use thiserror::Error;

/// One modality block of a part as declared by a data producer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDecl {
    pub modality: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartDecl {
    pub name: String,
    pub blocks: Vec<BlockDecl>,
}

/// Unvalidated layout, as read from a file header or built by hand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutDecl {
    pub total_dim: usize,
    pub parts: Vec<PartDecl>,
}

impl LayoutDecl {
    /// Lays the given `(part name, [(modality, len)])` list out back to back.
    pub fn sequential<P, M>(parts: P) -> Self
    where
        P: IntoIterator<Item = (String, M)>,
        M: IntoIterator<Item = (String, usize)>,
    {
        let mut offset = 0;
        let parts = parts
            .into_iter()
            .map(|(name, mods)| {
                let blocks = mods
                    .into_iter()
                    .map(|(modality, len)| {
                        let b = BlockDecl {
                            modality,
                            offset,
                            len,
                        };
                        offset += len;
                        b
                    })
                    .collect();
                PartDecl { name, blocks }
            })
            .collect();
        LayoutDecl {
            total_dim: offset,
            parts,
        }
    }

    /// `parts` parts named `p0, p1, ...`, each with the same modality blocks.
    pub fn uniform(parts: usize, modalities: &[(&str, usize)]) -> Self {
        Self::sequential((0..parts).map(|j| {
            (
                format!("p{j}"),
                modalities
                    .iter()
                    .map(|(m, len)| (m.to_string(), *len))
                    .collect::<Vec<_>>(),
            )
        }))
    }
}

/// A single problem found while validating a [`LayoutDecl`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutViolation {
    NoParts,
    PartWithoutModalities {
        part: usize,
    },
    EmptyBlock {
        part: usize,
        modality: String,
    },
    DuplicateModality {
        part: usize,
        modality: String,
    },
    OutOfBounds {
        part: usize,
        modality: String,
        end: usize,
        total_dim: usize,
    },
    OverlappingBlocks {
        first: (usize, String),
        second: (usize, String),
        at: usize,
    },
    CoverageGap {
        start: usize,
        end: usize,
    },
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoParts => write!(f, "layout has no parts"),
            Self::PartWithoutModalities { part } => write!(f, "part {part} has no modality blocks"),
            Self::EmptyBlock { part, modality } => {
                write!(f, "empty block: part {part}, modality '{modality}'")
            }
            Self::DuplicateModality { part, modality } => {
                write!(f, "part {part} declares modality '{modality}' twice")
            }
            Self::OutOfBounds {
                part,
                modality,
                end,
                total_dim,
            } => write!(
                f,
                "block part {part} modality '{modality}' ends at {end} beyond total_dim {total_dim}"
            ),
            Self::OverlappingBlocks { first, second, at } => write!(
                f,
                "overlapping blocks at index {at}: part {} '{}' and part {} '{}'",
                first.0, first.1, second.0, second.1
            ),
            Self::CoverageGap { start, end } => write!(f, "coverage gap [{start}, {end})"),
        }
    }
}

/// Every violation found in a declaration, in discovery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutReport {
    pub violations: Vec<LayoutViolation>,
}

impl LayoutReport {
    pub fn has_overlap(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, LayoutViolation::OverlappingBlocks { .. }))
    }

    pub fn has_gap(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, LayoutViolation::CoverageGap { .. }))
    }

    pub fn has_empty_block(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, LayoutViolation::EmptyBlock { .. }))
    }
}

impl fmt::Display for LayoutReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("invalid layout: {0}")]
    Invalid(LayoutReport),
    #[error("part index {part} out of range (layout has {parts} parts)")]
    PartOutOfRange { part: usize, parts: usize },
    #[error("unknown modality '{0}'")]
    UnknownModality(String),
    #[error("class count {0} is below 2")]
    TooFewClasses(usize),
}

/// Location of one (part, modality) block inside the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRef {
    pub part_index: usize,
    pub modality_index: usize,
    pub offset: usize,
    pub len: usize,
}

impl BlockRef {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// A validated layout. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    decl: LayoutDecl,
}

/// Checks every layout invariant, collecting all violations rather than
/// stopping at the first.
pub fn validate_layout(decl: LayoutDecl) -> Result<FeatureLayout, LayoutError> {
    let mut violations = Vec::new();
    if decl.parts.is_empty() {
        violations.push(LayoutViolation::NoParts);
    }
    let mut spans: Vec<(usize, usize, usize, &str)> = Vec::new();
    for (j, part) in decl.parts.iter().enumerate() {
        if part.blocks.is_empty() {
            violations.push(LayoutViolation::PartWithoutModalities { part: j });
        }
        for (m, block) in part.blocks.iter().enumerate() {
            if part.blocks[..m]
                .iter()
                .any(|b| b.modality == block.modality)
            {
                violations.push(LayoutViolation::DuplicateModality {
                    part: j,
                    modality: block.modality.clone(),
                });
            }
            if block.len == 0 {
                violations.push(LayoutViolation::EmptyBlock {
                    part: j,
                    modality: block.modality.clone(),
                });
                continue;
            }
            let end = block.offset + block.len;
            if end > decl.total_dim {
                violations.push(LayoutViolation::OutOfBounds {
                    part: j,
                    modality: block.modality.clone(),
                    end,
                    total_dim: decl.total_dim,
                });
            }
            spans.push((block.offset, end, j, &block.modality));
        }
    }

    spans.sort_by_key(|s| (s.0, s.1));
    let mut covered = 0usize;
    let mut last: Option<(usize, &str)> = None;
    for &(start, end, part, modality) in &spans {
        if start > covered {
            violations.push(LayoutViolation::CoverageGap {
                start: covered,
                end: start,
            });
        } else if start < covered {
            let (p, m) = last.expect("overlap implies a previous span");
            violations.push(LayoutViolation::OverlappingBlocks {
                first: (p, m.to_string()),
                second: (part, modality.to_string()),
                at: start,
            });
        }
        if end >= covered {
            covered = end;
            last = Some((part, modality));
        }
    }
    if covered < decl.total_dim {
        violations.push(LayoutViolation::CoverageGap {
            start: covered,
            end: decl.total_dim,
        });
    }

    if violations.is_empty() {
        Ok(FeatureLayout { decl })
    } else {
        Err(LayoutError::Invalid(LayoutReport { violations }))
    }
}

impl FeatureLayout {
    /// Builds a back-to-back layout and validates it.
    pub fn uniform(parts: usize, modalities: &[(&str, usize)]) -> Result<Self, LayoutError> {
        validate_layout(LayoutDecl::uniform(parts, modalities))
    }

    pub fn decl(&self) -> &LayoutDecl {
        &self.decl
    }

    pub fn into_decl(self) -> LayoutDecl {
        self.decl
    }

    pub fn total_dim(&self) -> usize {
        self.decl.total_dim
    }

    pub fn num_parts(&self) -> usize {
        self.decl.parts.len()
    }

    pub fn parts(&self) -> &[PartDecl] {
        &self.decl.parts
    }

    pub fn part_name(&self, part: usize) -> &str {
        &self.decl.parts[part].name
    }

    pub fn block_ranges(&self, part: usize) -> Result<Vec<BlockRef>, LayoutError> {
        let p = self
            .decl
            .parts
            .get(part)
            .ok_or(LayoutError::PartOutOfRange {
                part,
                parts: self.num_parts(),
            })?;
        Ok(p.blocks
            .iter()
            .enumerate()
            .map(|(m, b)| BlockRef {
                part_index: part,
                modality_index: m,
                offset: b.offset,
                len: b.len,
            })
            .collect())
    }

    /// All blocks, part-major then modality order.
    pub fn blocks(&self) -> impl Iterator<Item = BlockRef> + '_ {
        self.decl.parts.iter().enumerate().flat_map(|(j, p)| {
            p.blocks.iter().enumerate().map(move |(m, b)| BlockRef {
                part_index: j,
                modality_index: m,
                offset: b.offset,
                len: b.len,
            })
        })
    }

    pub fn modality_of(&self, block: &BlockRef) -> &str {
        &self.decl.parts[block.part_index].blocks[block.modality_index].modality
    }

    /// Distinct modality ids in order of first appearance.
    pub fn modality_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for p in &self.decl.parts {
            for b in &p.blocks {
                if !ids.contains(&b.modality) {
                    ids.push(b.modality.clone());
                }
            }
        }
        ids
    }

    /// The part partition of one weight column: index set per part.
    pub fn part_sets(&self) -> Vec<Vec<usize>> {
        self.decl
            .parts
            .iter()
            .map(|p| {
                p.blocks
                    .iter()
                    .flat_map(|b| b.offset..b.offset + b.len)
                    .collect()
            })
            .collect()
    }

    /// The modality-within-part partition: one index set per block, grouped
    /// by part.
    pub fn block_sets(&self) -> Vec<Vec<Vec<usize>>> {
        self.decl
            .parts
            .iter()
            .map(|p| {
                p.blocks
                    .iter()
                    .map(|b| (b.offset..b.offset + b.len).collect())
                    .collect()
            })
            .collect()
    }

    /// Restricts the layout to one modality. Returns the sub-layout (one block
    /// per part that carries the modality) and, for each sub-layout column, the
    /// column it came from in this layout.
    pub fn modality_sublayout(
        &self,
        modality: &str,
    ) -> Result<(FeatureLayout, Vec<usize>), LayoutError> {
        let mut columns = Vec::new();
        let mut parts = Vec::new();
        for p in &self.decl.parts {
            if let Some(b) = p.blocks.iter().find(|b| b.modality == modality) {
                parts.push((p.name.clone(), vec![(modality.to_string(), b.len)]));
                columns.extend(b.offset..b.offset + b.len);
            }
        }
        if parts.is_empty() {
            return Err(LayoutError::UnknownModality(modality.to_string()));
        }
        Ok((validate_layout(LayoutDecl::sequential(parts))?, columns))
    }

    /// True when every part carries exactly one block and all blocks share a
    /// modality id.
    pub fn is_single_modality(&self) -> bool {
        self.modality_ids().len() == 1 && self.decl.parts.iter().all(|p| p.blocks.len() == 1)
    }
}

/// Partition `τ` of `vec(W)` by task (class column). `vec` stacks columns, so
/// `w_c^k` sits at `c * d + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskPartition {
    class_count: usize,
}

impl TaskPartition {
    pub fn new(class_count: usize) -> Result<Self, LayoutError> {
        if class_count < 2 {
            return Err(LayoutError::TooFewClasses(class_count));
        }
        Ok(Self { class_count })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn index_sets(&self, feature_count: usize) -> Vec<Vec<usize>> {
        (0..self.class_count)
            .map(|c| (0..feature_count).map(|k| c * feature_count + k).collect())
            .collect()
    }
}

/// Partition `φ` of `vec(W)` by feature row: `d` sets of size `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowPartition {
    feature_count: usize,
}

impl RowPartition {
    pub fn new(feature_count: usize) -> Self {
        Self { feature_count }
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn index_sets(&self, class_count: usize) -> Vec<Vec<usize>> {
        (0..self.feature_count)
            .map(|k| {
                (0..class_count)
                    .map(|c| c * self.feature_count + k)
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_part() -> LayoutDecl {
        LayoutDecl::uniform(2, &[("skeleton", 2)])
    }

    #[test]
    fn minimal_layout_is_valid() {
        let layout = validate_layout(two_part()).unwrap();
        assert_eq!(layout.total_dim(), 4);
        assert_eq!(layout.num_parts(), 2);
    }

    #[test]
    fn overlapping_blocks_reported() {
        let decl = LayoutDecl {
            total_dim: 3,
            parts: vec![
                PartDecl {
                    name: "a".into(),
                    blocks: vec![BlockDecl {
                        modality: "m".into(),
                        offset: 0,
                        len: 2,
                    }],
                },
                PartDecl {
                    name: "b".into(),
                    blocks: vec![BlockDecl {
                        modality: "m".into(),
                        offset: 1,
                        len: 2,
                    }],
                },
            ],
        };
        match validate_layout(decl) {
            Err(LayoutError::Invalid(report)) => assert!(report.has_overlap()),
            other => panic!("expected overlap, got {other:?}"),
        }
    }

    #[test]
    fn all_violations_collected() {
        let decl = LayoutDecl {
            total_dim: 10,
            parts: vec![
                PartDecl {
                    name: "a".into(),
                    blocks: vec![
                        BlockDecl {
                            modality: "m".into(),
                            offset: 0,
                            len: 3,
                        },
                        BlockDecl {
                            modality: "n".into(),
                            offset: 3,
                            len: 0,
                        },
                    ],
                },
                PartDecl {
                    name: "b".into(),
                    blocks: vec![BlockDecl {
                        modality: "m".into(),
                        offset: 5,
                        len: 2,
                    }],
                },
            ],
        };
        let Err(LayoutError::Invalid(report)) = validate_layout(decl) else {
            panic!("expected invalid layout");
        };
        assert!(report.has_empty_block());
        assert!(report.has_gap());
        assert_eq!(
            report
                .violations
                .iter()
                .filter(|v| matches!(v, LayoutViolation::CoverageGap { .. }))
                .count(),
            2
        );
    }

    #[test]
    fn block_ranges_of_minimal_layout() {
        let layout = validate_layout(two_part()).unwrap();
        assert_eq!(
            layout.block_ranges(0).unwrap(),
            vec![BlockRef {
                part_index: 0,
                modality_index: 0,
                offset: 0,
                len: 2
            }]
        );
        assert_eq!(
            layout.block_ranges(1).unwrap(),
            vec![BlockRef {
                part_index: 1,
                modality_index: 0,
                offset: 2,
                len: 2
            }]
        );
        assert!(matches!(
            layout.block_ranges(2),
            Err(LayoutError::PartOutOfRange { part: 2, parts: 2 })
        ));
    }

    #[test]
    fn paper_scale_layout() {
        // 20 joints x (skeleton, LOP, HON4D) plus an auxiliary skeleton-only part.
        let mut parts: Vec<(String, Vec<(String, usize)>)> = (0..20)
            .map(|j| {
                (
                    format!("joint{j}"),
                    vec![
                        ("skeleton".to_string(), 89),
                        ("lop".to_string(), 252),
                        ("hon4d".to_string(), 700),
                    ],
                )
            })
            .collect();
        parts.push(("aux".into(), vec![("skeleton".into(), 96)]));
        let layout = validate_layout(LayoutDecl::sequential(parts)).unwrap();
        assert_eq!(layout.total_dim(), 20_916);
        let last_joint = layout.block_ranges(19).unwrap();
        assert_eq!(
            last_joint.iter().map(|b| b.len).collect::<Vec<_>>(),
            vec![89, 252, 700]
        );
        assert_eq!(last_joint[0].offset, 19 * 1041);
        assert_eq!(layout.block_ranges(20).unwrap().len(), 1);
    }

    #[test]
    fn modality_sublayout_extracts_columns() {
        let layout = FeatureLayout::uniform(3, &[("a", 2), ("b", 1)]).unwrap();
        let (sub, cols) = layout.modality_sublayout("b").unwrap();
        assert_eq!(sub.total_dim(), 3);
        assert_eq!(cols, vec![2, 5, 8]);
        assert!(sub.is_single_modality());
        assert!(matches!(
            layout.modality_sublayout("c"),
            Err(LayoutError::UnknownModality(_))
        ));
    }

    #[test]
    fn task_and_row_partitions() {
        let tau = TaskPartition::new(2).unwrap();
        assert_eq!(tau.index_sets(3), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        let phi = RowPartition::new(3);
        assert_eq!(phi.index_sets(2), vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
        assert!(TaskPartition::new(1).is_err());
    }
}
