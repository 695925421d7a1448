//! Event spaces as Boolean algebras generated by orthogonal partitions.
//!
//! A [`Partition`] is a family of pairwise-orthogonal nonzero subspaces
//! whose ranks sum to the ambient dimension. The [`EventAlgebra`] it
//! generates keeps members implicit as label subsets, so the `2^k` blowup
//! only ever materializes when a member is explicitly requested.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::hilbert::{op_norm, Event, HilbertError, Tolerances};

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("invalid partition: {reason}")]
    InvalidPartition { reason: String },
    #[error("unknown block label: {0}")]
    UnknownLabel(String),
    #[error(
        "blocks {p_label} and {q_label} fail the orthogonality condition \
         (projector product deviates from the meet projector by {defect:.3e}); \
         no common refinement is guaranteed"
    )]
    NonCommuting {
        p_label: String,
        q_label: String,
        defect: f64,
    },
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

/// An orthogonal partition of the ambient space into labelled blocks.
#[derive(Debug, Clone)]
pub struct Partition {
    ambient_dim: usize,
    blocks: Vec<Event>,
    labels: Vec<String>,
}

impl Partition {
    pub fn new(named_blocks: Vec<(String, Event)>, tol: &Tolerances) -> Result<Self, EventsError> {
        if named_blocks.is_empty() {
            return Err(EventsError::InvalidPartition {
                reason: "a partition needs at least one block".into(),
            });
        }
        let ambient_dim = named_blocks[0].1.ambient_dim();
        let mut labels = Vec::with_capacity(named_blocks.len());
        let mut blocks = Vec::with_capacity(named_blocks.len());
        let mut seen = BTreeSet::new();
        let mut rank_sum = 0usize;
        for (label, block) in named_blocks {
            if block.ambient_dim() != ambient_dim {
                return Err(EventsError::InvalidPartition {
                    reason: format!(
                        "block {label} lives in dimension {}, expected {ambient_dim}",
                        block.ambient_dim()
                    ),
                });
            }
            if block.is_zero() {
                return Err(EventsError::InvalidPartition {
                    reason: format!("block {label} is the zero subspace"),
                });
            }
            if !seen.insert(label.clone()) {
                return Err(EventsError::InvalidPartition {
                    reason: format!("duplicate label {label}"),
                });
            }
            rank_sum += block.rank();
            labels.push(label);
            blocks.push(block);
        }
        for i in 0..blocks.len() {
            for j in i + 1..blocks.len() {
                if !blocks[i].is_orthogonal(&blocks[j], tol)? {
                    return Err(EventsError::InvalidPartition {
                        reason: format!(
                            "blocks {} and {} overlap beyond tolerance",
                            labels[i], labels[j]
                        ),
                    });
                }
            }
        }
        if rank_sum != ambient_dim {
            return Err(EventsError::InvalidPartition {
                reason: format!(
                    "block ranks sum to {rank_sum}, ambient dimension is {ambient_dim}"
                ),
            });
        }
        Ok(Partition {
            ambient_dim,
            blocks,
            labels,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Event] {
        &self.blocks
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Event)> {
        self.labels.iter().zip(self.blocks.iter())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn by_label(&self, label: &str) -> Result<&Event, EventsError> {
        self.index_of(label)
            .map(|i| &self.blocks[i])
            .ok_or_else(|| EventsError::UnknownLabel(label.to_string()))
    }

    /// Join of the selected blocks. Because blocks are orthogonal this is a
    /// frame concatenation, so the result is exact.
    pub fn join_of(
        &self,
        labels: &BTreeSet<String>,
        tol: &Tolerances,
    ) -> Result<Event, EventsError> {
        let mut indices = Vec::with_capacity(labels.len());
        for l in labels {
            indices.push(
                self.index_of(l)
                    .ok_or_else(|| EventsError::UnknownLabel(l.clone()))?,
            );
        }
        indices.sort_unstable();
        if indices.is_empty() {
            return Ok(Event::zero(self.ambient_dim));
        }
        let total: usize = indices.iter().map(|i| self.blocks[*i].rank()).sum();
        let mut frame = crate::hilbert::CMatrix::zeros(self.ambient_dim, total);
        let mut col = 0;
        for i in indices {
            let b = &self.blocks[i];
            for j in 0..b.rank() {
                frame.set_column(col, &b.frame().column(j).into_owned());
                col += 1;
            }
        }
        Ok(Event::from_frame(frame, tol)?)
    }
}

/// The Boolean algebra generated by a partition; members are label subsets.
#[derive(Debug, Clone)]
pub struct EventAlgebra {
    generators: Partition,
}

impl EventAlgebra {
    pub fn from_partition(generators: Partition) -> Self {
        EventAlgebra { generators }
    }

    pub fn atoms(&self) -> &Partition {
        &self.generators
    }

    pub fn ambient_dim(&self) -> usize {
        self.generators.ambient_dim()
    }

    /// Number of members (`2^k` for `k` atoms).
    pub fn member_count(&self) -> u128 {
        1u128 << self.generators.len().min(127)
    }

    /// Materializes the member for a label subset.
    pub fn member(
        &self,
        labels: &BTreeSet<String>,
        tol: &Tolerances,
    ) -> Result<Event, EventsError> {
        self.generators.join_of(labels, tol)
    }

    /// Tests whether `e` is a member, i.e. a join of atoms. Returns the atom
    /// labels when it is.
    pub fn membership(
        &self,
        e: &Event,
        tol: &Tolerances,
    ) -> Result<Option<BTreeSet<String>>, EventsError> {
        if e.ambient_dim() != self.ambient_dim() {
            return Err(EventsError::Hilbert(HilbertError::DimensionMismatch {
                expected: self.ambient_dim(),
                got: e.ambient_dim(),
            }));
        }
        let mut contained = BTreeSet::new();
        let mut rank_sum = 0usize;
        for (label, block) in self.generators.iter() {
            if e.contains(block, tol)? {
                contained.insert(label.clone());
                rank_sum += block.rank();
            }
        }
        if rank_sum == e.rank() {
            Ok(Some(contained))
        } else {
            Ok(None)
        }
    }

    /// True iff the generating blocks are minimal nonzero members. At finite
    /// dimension this always holds for a valid partition; the check is kept
    /// explicit so the property is verified rather than assumed.
    pub fn is_atomic_generated(&self, tol: &Tolerances) -> Result<bool, EventsError> {
        let blocks = self.generators.blocks();
        for (i, b) in blocks.iter().enumerate() {
            if b.is_zero() {
                return Ok(false);
            }
            for (j, other) in blocks.iter().enumerate() {
                if i != j && b.contains(other, tol)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// True iff `meet(E,F) = {0}` is equivalent to `E ⊥ F`.
///
/// Pairs breaking the equivalence are exactly the pairs that are not
/// "classical enough" to live in one Boolean event algebra.
pub fn orthogonality_condition_holds(
    e: &Event,
    f: &Event,
    tol: &Tolerances,
) -> Result<bool, EventsError> {
    let meet_zero = e.meet(f, tol)?.is_zero();
    let orthogonal = e.is_orthogonal(f, tol)?;
    Ok(meet_zero == orthogonal)
}

/// True iff every block of `fine` is contained in exactly one block of
/// `coarse` and the ranks add up blockwise.
pub fn is_refinement(
    fine: &Partition,
    coarse: &Partition,
    tol: &Tolerances,
) -> Result<bool, EventsError> {
    if fine.ambient_dim() != coarse.ambient_dim() {
        return Err(EventsError::Hilbert(HilbertError::DimensionMismatch {
            expected: coarse.ambient_dim(),
            got: fine.ambient_dim(),
        }));
    }
    let mut coarse_rank_seen = vec![0usize; coarse.len()];
    for fine_block in fine.blocks() {
        let mut owner = None;
        for (ci, coarse_block) in coarse.blocks().iter().enumerate() {
            if coarse_block.contains(fine_block, tol)? {
                if owner.is_some() {
                    return Ok(false);
                }
                owner = Some(ci);
            }
        }
        match owner {
            Some(ci) => coarse_rank_seen[ci] += fine_block.rank(),
            None => return Ok(false),
        }
    }
    Ok(coarse_rank_seen
        .iter()
        .zip(coarse.blocks())
        .all(|(seen, block)| *seen == block.rank()))
}

/// Common refinement of two partitions by pairwise meets.
///
/// Requires every cross pair to satisfy the orthogonality condition with
/// the meet realized at full principal angle (commuting projectors). A pair
/// with a partial-angle overlap yields [`EventsError::NonCommuting`]: that
/// error is a finding, not a defect, since no common refinement is
/// guaranteed for such pairs.
pub fn common_refinement(
    p: &Partition,
    q: &Partition,
    tol: &Tolerances,
) -> Result<Partition, EventsError> {
    if p.ambient_dim() != q.ambient_dim() {
        return Err(EventsError::Hilbert(HilbertError::DimensionMismatch {
            expected: p.ambient_dim(),
            got: q.ambient_dim(),
        }));
    }
    let mut named = Vec::new();
    for (pl, pb) in p.iter() {
        for (ql, qb) in q.iter() {
            let meet = pb.meet(qb, tol)?;
            // commuting projectors satisfy P_p P_q = P_meet; anything else
            // signals a partial principal angle
            let defect = op_norm(&(pb.projector() * qb.projector() - meet.projector()));
            if defect > tol.exact {
                return Err(EventsError::NonCommuting {
                    p_label: pl.clone(),
                    q_label: ql.clone(),
                    defect,
                });
            }
            if !meet.is_zero() {
                named.push((format!("{pl}&{ql}"), meet));
            }
        }
    }
    Partition::new(named, tol)
}
