//! Consistent-histories engine.
//!
//! A [`HistorySpace`] couples unitary step dynamics with one [`SampleSpace`]
//! per intermediate time. Branch vectors are the chained projector images of
//! the initial state in the Heisenberg picture; their squared norms are
//! *weights* throughout — they only ever earn a probabilistic reading
//! elsewhere. Consistency (vanishing pairwise overlaps) is graded via
//! `max_overlap` rather than binary, and [`bc_refine`] constructs the
//! branching refinement of a consistent space from its nonzero branch
//! chains.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::events::{EventAlgebra, EventsError, Partition};
use crate::hilbert::{
    op_norm, op_norm_distance, orthonormal_span, CMatrix, Event, HilbertError, Operator,
    OperatorKind, StateVector, Tolerances,
};

#[derive(Debug, Error)]
pub enum HistoriesError {
    #[error("invalid sample space: {reason}")]
    InvalidSampleSpace { reason: String },
    #[error("invalid dynamics: {reason}")]
    InvalidDynamics { reason: String },
    #[error("invalid history space: {reason}")]
    InvalidHistorySpace { reason: String },
    #[error("{what} index {got} out of range (max {max})")]
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        max: usize,
    },
    #[error("history enumeration would visit {total} histories, cap is {cap}")]
    EnumerationCap { total: usize, cap: usize },
    #[error("history space is not consistent: max overlap {max_overlap:.3e}")]
    NotConsistent { max_overlap: f64 },
    #[error("invalid coarse-graining map: {reason}")]
    InvalidMapping { reason: String },
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Events(#[from] EventsError),
}

/// A complete family of mutually orthogonal projectors with cell labels.
#[derive(Debug, Clone)]
pub struct SampleSpace {
    ambient_dim: usize,
    projectors: Vec<Operator>,
    cell_labels: Vec<String>,
}

impl SampleSpace {
    pub fn new(
        projectors: Vec<(String, CMatrix)>,
        tol: &Tolerances,
    ) -> Result<Self, HistoriesError> {
        if projectors.is_empty() {
            return Err(HistoriesError::InvalidSampleSpace {
                reason: "a sample space needs at least one cell".into(),
            });
        }
        let dim = projectors[0].1.nrows();
        let mut ops = Vec::with_capacity(projectors.len());
        let mut labels = Vec::with_capacity(projectors.len());
        for (label, m) in projectors {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(HistoriesError::InvalidSampleSpace {
                    reason: format!("cell {label} has shape {}x{}", m.nrows(), m.ncols()),
                });
            }
            let op = Operator::projector(m, tol).map_err(|e| {
                HistoriesError::InvalidSampleSpace {
                    reason: format!("cell {label}: {e}"),
                }
            })?;
            if labels.contains(&label) {
                return Err(HistoriesError::InvalidSampleSpace {
                    reason: format!("duplicate cell label {label}"),
                });
            }
            labels.push(label);
            ops.push(op);
        }
        let mut sum = CMatrix::zeros(dim, dim);
        for op in &ops {
            sum += op.entries();
        }
        let completeness = op_norm(&(sum - CMatrix::identity(dim, dim)));
        if completeness > tol.exact {
            return Err(HistoriesError::InvalidSampleSpace {
                reason: format!("cells do not sum to the identity (defect {completeness:.3e})"),
            });
        }
        for i in 0..ops.len() {
            for j in i + 1..ops.len() {
                let cross = op_norm(&(ops[i].entries() * ops[j].entries()));
                if cross > tol.exact {
                    return Err(HistoriesError::InvalidSampleSpace {
                        reason: format!(
                            "cells {} and {} are not orthogonal (overlap {cross:.3e})",
                            labels[i], labels[j]
                        ),
                    });
                }
            }
        }
        Ok(SampleSpace {
            ambient_dim: dim,
            projectors: ops,
            cell_labels: labels,
        })
    }

    pub fn from_partition(p: &Partition) -> Self {
        SampleSpace {
            ambient_dim: p.ambient_dim(),
            projectors: p
                .blocks()
                .iter()
                .map(|b| b.projector_op())
                .collect(),
            cell_labels: p.labels().to_vec(),
        }
    }

    pub fn to_partition(&self, tol: &Tolerances) -> Result<Partition, HistoriesError> {
        let named = self
            .cell_labels
            .iter()
            .zip(self.projectors.iter())
            .map(|(l, p)| {
                // singular values of a projector are 0 or 1; cut in between
                let frame = orthonormal_span(p.entries(), 0.5);
                Event::from_frame(frame, tol).map(|e| (l.clone(), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Partition::new(named, tol)?)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn projectors(&self) -> &[Operator] {
        &self.projectors
    }

    pub fn cell_labels(&self) -> &[String] {
        &self.cell_labels
    }
}

/// Unitary step dynamics over strictly increasing time labels.
#[derive(Debug, Clone)]
pub struct Dynamics {
    times: Vec<f64>,
    steps: Vec<Operator>,
}

impl Dynamics {
    pub fn new(
        times: Vec<f64>,
        steps: Vec<(CMatrix, Tolerances)>,
    ) -> Result<Self, HistoriesError> {
        let validated = steps
            .into_iter()
            .map(|(m, tol)| Operator::unitary(m, &tol))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| HistoriesError::InvalidDynamics {
                reason: e.to_string(),
            })?;
        Self::from_operators(times, validated)
    }

    pub fn from_operators(times: Vec<f64>, steps: Vec<Operator>) -> Result<Self, HistoriesError> {
        if times.len() != steps.len() + 1 {
            return Err(HistoriesError::InvalidDynamics {
                reason: format!(
                    "{} time labels need {} steps, got {}",
                    times.len(),
                    times.len().saturating_sub(1),
                    steps.len()
                ),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HistoriesError::InvalidDynamics {
                reason: "time labels must be strictly increasing".into(),
            });
        }
        for (k, s) in steps.iter().enumerate() {
            if s.kind() != OperatorKind::Unitary || s.dim_in() != s.dim_out() {
                return Err(HistoriesError::InvalidDynamics {
                    reason: format!("step {k} must be a square unitary"),
                });
            }
        }
        Ok(Dynamics { times, steps })
    }

    /// Trivial dynamics: identity steps at integer times `0..=n`.
    pub fn trivial(dim: usize, n_steps: usize) -> Self {
        Dynamics {
            times: (0..=n_steps).map(|k| k as f64).collect(),
            steps: (0..n_steps).map(|_| Operator::identity(dim)).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> &[Operator] {
        &self.steps
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
}

/// A history: one cell index per sample space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct History {
    pub indices: Vec<usize>,
}

impl History {
    pub fn new(indices: Vec<usize>) -> Self {
        History { indices }
    }
}

/// Enumeration limits. The weight floor is off by default: small branches
/// are kept because dropping them changes what the checkers can see. When a
/// floor is set, reports flag it.
#[derive(Debug, Clone, Copy)]
pub struct HistoryOptions {
    pub cap: usize,
    pub weight_floor: Option<f64>,
}

impl Default for HistoryOptions {
    fn default() -> Self {
        HistoryOptions {
            cap: 4096,
            weight_floor: None,
        }
    }
}

/// Dynamics plus one sample space per time `t_1..t_n` and a normalized
/// initial state at `t_0`.
#[derive(Debug, Clone)]
pub struct HistorySpace {
    dynamics: Dynamics,
    sample_spaces: Vec<SampleSpace>,
    initial: StateVector,
}

/// One enumerated history with its branch vector (Heisenberg picture) and
/// weight.
#[derive(Debug, Clone)]
pub struct Branch {
    pub history: History,
    pub vector: StateVector,
    pub weight: f64,
}

/// Overlap witness between two histories.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OverlapRecord {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub overlap: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConsistencyReport {
    pub history_count: usize,
    pub max_overlap: f64,
    pub consistent: bool,
    pub offenders: Vec<OverlapRecord>,
    /// Echoes the floor used during enumeration, if any.
    pub weight_floor: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AdditivityReport {
    pub max_violation: f64,
    pub worst_coarse_history: Option<Vec<usize>>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AlgebraMembershipReport {
    pub all_members: bool,
    pub missing: Vec<MissingMember>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MissingMember {
    pub indices: Vec<usize>,
    pub weight: f64,
}

/// Per-time map from coarse cell index to the fine cell indices composing it.
pub type CoarseMapping = Vec<Vec<Vec<usize>>>;

impl HistorySpace {
    pub fn new(
        dynamics: Dynamics,
        sample_spaces: Vec<SampleSpace>,
        initial: StateVector,
        tol: &Tolerances,
    ) -> Result<Self, HistoriesError> {
        let dim = initial.dim();
        if sample_spaces.len() != dynamics.n_steps() {
            return Err(HistoriesError::InvalidHistorySpace {
                reason: format!(
                    "need one sample space per step: {} steps, {} spaces",
                    dynamics.n_steps(),
                    sample_spaces.len()
                ),
            });
        }
        for (k, s) in sample_spaces.iter().enumerate() {
            if s.ambient_dim() != dim {
                return Err(HistoriesError::InvalidHistorySpace {
                    reason: format!("sample space {k} has dimension {}", s.ambient_dim()),
                });
            }
        }
        for (k, s) in dynamics.steps().iter().enumerate() {
            if s.dim_in() != dim {
                return Err(HistoriesError::InvalidHistorySpace {
                    reason: format!("step {k} has dimension {}", s.dim_in()),
                });
            }
        }
        if (initial.norm() - 1.0).abs() > tol.exact {
            return Err(HistoriesError::InvalidHistorySpace {
                reason: format!("initial state has norm {:.6}, expected 1", initial.norm()),
            });
        }
        Ok(HistorySpace {
            dynamics,
            sample_spaces,
            initial,
        })
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn sample_spaces(&self) -> &[SampleSpace] {
        &self.sample_spaces
    }

    pub fn initial(&self) -> &StateVector {
        &self.initial
    }

    pub fn ambient_dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn n_times(&self) -> usize {
        self.sample_spaces.len()
    }

    pub fn history_count(&self) -> usize {
        self.sample_spaces.iter().map(SampleSpace::len).product()
    }

    /// Cumulative evolution `W_k = U_k ⋯ U_1` mapping `t_0` to `t_k`.
    fn cumulative(&self, k: usize) -> CMatrix {
        let dim = self.ambient_dim();
        let mut w = CMatrix::identity(dim, dim);
        for step in self.dynamics.steps().iter().take(k) {
            w = step.entries() * w;
        }
        w
    }

    /// Heisenberg-picture projector `W_k^H P W_k` for cell `cell` of the
    /// sample space at time index `k` (1-based over `t_1..t_n`).
    pub fn heisenberg_projector(&self, k: usize, cell: usize) -> Result<Operator, HistoriesError> {
        if k == 0 || k > self.n_times() {
            return Err(HistoriesError::IndexOutOfRange {
                what: "time",
                got: k,
                max: self.n_times(),
            });
        }
        let space = &self.sample_spaces[k - 1];
        if cell >= space.len() {
            return Err(HistoriesError::IndexOutOfRange {
                what: "cell",
                got: cell,
                max: space.len() - 1,
            });
        }
        let w = self.cumulative(k);
        let conj = w.adjoint() * space.projectors()[cell].entries() * &w;
        Ok(Operator::general(conj))
    }

    fn check_history(&self, alpha: &History) -> Result<(), HistoriesError> {
        if alpha.indices.len() != self.n_times() {
            return Err(HistoriesError::IndexOutOfRange {
                what: "history length",
                got: alpha.indices.len(),
                max: self.n_times(),
            });
        }
        for (k, idx) in alpha.indices.iter().enumerate() {
            if *idx >= self.sample_spaces[k].len() {
                return Err(HistoriesError::IndexOutOfRange {
                    what: "cell",
                    got: *idx,
                    max: self.sample_spaces[k].len() - 1,
                });
            }
        }
        Ok(())
    }

    /// Branch vector `ψ_α = P_{α_n}(t_n) ⋯ P_{α_1}(t_1) ψ_0`.
    ///
    /// Evaluated as a forward pass `P_{α_k} U_k` followed by `W_n^H`, which
    /// is the same chain with the cumulative evolutions telescoped.
    pub fn branch_vector(&self, alpha: &History) -> Result<StateVector, HistoriesError> {
        self.check_history(alpha)?;
        let mut phi = self.initial.amplitudes().clone();
        for (k, idx) in alpha.indices.iter().enumerate() {
            phi = self.dynamics.steps()[k].entries() * phi;
            phi = self.sample_spaces[k].projectors()[*idx].entries() * phi;
        }
        for step in self.dynamics.steps().iter().rev() {
            phi = step.entries().adjoint() * phi;
        }
        Ok(StateVector::from_cvector(phi)?)
    }

    /// `‖ψ_α‖²` — a weight, not a probability.
    pub fn history_weight(&self, alpha: &History) -> Result<f64, HistoriesError> {
        Ok(self.branch_vector(alpha)?.norm().powi(2))
    }

    /// Enumerates all histories (subject to `opts`) with their branch
    /// vectors, in lexicographic index order.
    pub fn enumerate(&self, opts: &HistoryOptions) -> Result<Vec<Branch>, HistoriesError> {
        let total = self.history_count();
        if total > opts.cap {
            return Err(HistoriesError::EnumerationCap {
                total,
                cap: opts.cap,
            });
        }
        // forward layer-by-layer pass over partial chains
        let mut layer: Vec<(Vec<usize>, CVectorAlias)> =
            vec![(Vec::new(), self.initial.amplitudes().clone())];
        for (k, space) in self.sample_spaces.iter().enumerate() {
            let step = self.dynamics.steps()[k].entries();
            let mut next = Vec::with_capacity(layer.len() * space.len());
            for (prefix, phi) in &layer {
                let evolved = step * phi;
                for (c, proj) in space.projectors().iter().enumerate() {
                    let piece = proj.entries() * &evolved;
                    if let Some(floor) = opts.weight_floor {
                        if piece.norm_squared() <= floor {
                            continue;
                        }
                    }
                    let mut indices = prefix.clone();
                    indices.push(c);
                    next.push((indices, piece));
                }
            }
            layer = next;
        }
        let mut out = Vec::with_capacity(layer.len());
        for (indices, mut phi) in layer {
            for step in self.dynamics.steps().iter().rev() {
                phi = step.entries().adjoint() * phi;
            }
            let weight = phi.norm_squared();
            out.push(Branch {
                history: History::new(indices),
                vector: StateVector::from_cvector(phi)?,
                weight,
            });
        }
        Ok(out)
    }

    /// Pairwise-overlap report. `consistent` iff the largest overlap between
    /// distinct branch vectors stays below `tol.consistency`.
    pub fn consistency_report(
        &self,
        tol: &Tolerances,
        opts: &HistoryOptions,
    ) -> Result<ConsistencyReport, HistoriesError> {
        let branches = self.enumerate(opts)?;
        let mut max_overlap = 0.0_f64;
        let mut offenders = Vec::new();
        for i in 0..branches.len() {
            for j in i + 1..branches.len() {
                let overlap = branches[i].vector.inner(&branches[j].vector).norm();
                max_overlap = max_overlap.max(overlap);
                if overlap > tol.consistency
                    && branches[i].weight > 0.0
                    && branches[j].weight > 0.0
                {
                    offenders.push(OverlapRecord {
                        first: branches[i].history.indices.clone(),
                        second: branches[j].history.indices.clone(),
                        overlap,
                    });
                }
            }
        }
        offenders.sort_by(|a, b| b.overlap.partial_cmp(&a.overlap).unwrap());
        Ok(ConsistencyReport {
            history_count: branches.len(),
            max_overlap,
            consistent: max_overlap <= tol.consistency,
            offenders,
            weight_floor: opts.weight_floor,
        })
    }

    /// True iff no pair of histories diverges and later agrees with both
    /// weights above `tol.consistency`.
    pub fn is_branching(
        &self,
        tol: &Tolerances,
        opts: &HistoryOptions,
    ) -> Result<bool, HistoriesError> {
        let branches = self.enumerate(opts)?;
        for i in 0..branches.len() {
            for j in i + 1..branches.len() {
                let (a, b) = (&branches[i], &branches[j]);
                if a.weight.min(b.weight) <= tol.consistency {
                    continue;
                }
                if diverges_then_agrees(&a.history.indices, &b.history.indices) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Checks `p_coarse = Σ p_fine` across an explicit coarse-graining map.
    pub fn additivity_check(
        fine: &HistorySpace,
        coarse: &HistorySpace,
        mapping: &CoarseMapping,
        tol: &Tolerances,
        opts: &HistoryOptions,
    ) -> Result<AdditivityReport, HistoriesError> {
        validate_mapping(fine, coarse, mapping, tol)?;
        let fine_branches = fine.enumerate(opts)?;
        let coarse_branches = coarse.enumerate(opts)?;
        let mut max_violation = 0.0_f64;
        let mut worst = None;
        for cb in &coarse_branches {
            let mut fine_sum = 0.0;
            for fb in &fine_branches {
                let member = fb
                    .history
                    .indices
                    .iter()
                    .enumerate()
                    .all(|(k, fi)| mapping[k][cb.history.indices[k]].contains(fi));
                if member {
                    fine_sum += fb.weight;
                }
            }
            let violation = (cb.weight - fine_sum).abs();
            if violation > max_violation {
                max_violation = violation;
                worst = Some(cb.history.indices.clone());
            }
        }
        Ok(AdditivityReport {
            max_violation,
            worst_coarse_history: worst,
        })
    }

    /// Branching refinement of a consistent history space.
    ///
    /// At every time `t_k` the sample space is refined, inside each original
    /// cell, by the rank-1 projectors onto the (forward-picture) nonzero
    /// partial branch chains ending in that cell, completed by the
    /// orthocomplement of those chains inside the cell. At the final time
    /// the chains are exactly the branch vectors, so the refinement contains
    /// the projectors onto every nonzero `ψ_α`. Consistency makes distinct
    /// chains orthogonal, which is what turns the refined space into a
    /// branching one: a chain cell responds only to its own prefix.
    pub fn bc_refine(
        &self,
        tol: &Tolerances,
        opts: &HistoryOptions,
    ) -> Result<HistorySpace, HistoriesError> {
        let report = self.consistency_report(tol, opts)?;
        if !report.consistent {
            return Err(HistoriesError::NotConsistent {
                max_overlap: report.max_overlap,
            });
        }
        let dim = self.ambient_dim();
        // forward partial chains per time
        let mut layer: Vec<(Vec<usize>, CVectorAlias)> =
            vec![(Vec::new(), self.initial.amplitudes().clone())];
        let mut refined_spaces = Vec::with_capacity(self.n_times());
        for (k, space) in self.sample_spaces.iter().enumerate() {
            let step = self.dynamics.steps()[k].entries();
            let mut next = Vec::new();
            for (prefix, phi) in &layer {
                let evolved = step * phi;
                for c in 0..space.len() {
                    let piece = space.projectors()[c].entries() * &evolved;
                    let mut indices = prefix.clone();
                    indices.push(c);
                    next.push((indices, piece));
                }
            }
            // chains with weight above the consistency scale become cells;
            // anything smaller is left to the per-cell remainder
            let mut cells: Vec<(String, CMatrix)> = Vec::new();
            for (c, label) in space.cell_labels().iter().enumerate() {
                let mut kept: Vec<CVectorAlias> = Vec::new();
                for (indices, piece) in &next {
                    if indices[k] == c && piece.norm_squared() > tol.consistency {
                        kept.push(piece.clone());
                    }
                }
                // modified Gram-Schmidt; consistency already makes these
                // nearly orthogonal
                let mut frame_cols: Vec<CVectorAlias> = Vec::new();
                for v in kept {
                    let mut w = v;
                    for u in &frame_cols {
                        let coeff = u.dotc(&w);
                        w -= u * coeff;
                    }
                    let n = w.norm();
                    if n * n > tol.consistency {
                        frame_cols.push(w / C64::new(n, 0.0));
                    }
                }
                for (i, col) in frame_cols.iter().enumerate() {
                    let proj = col * col.adjoint();
                    cells.push((format!("{label}.b{i}"), proj));
                }
                // remainder of the original cell
                let mut kept_proj = CMatrix::zeros(dim, dim);
                for col in &frame_cols {
                    kept_proj += col * col.adjoint();
                }
                let remainder = space.projectors()[c].entries() - &kept_proj;
                let rem_frame = orthonormal_span(&remainder, 0.5);
                if rem_frame.ncols() > 0 {
                    cells.push((format!("{label}.rest"), &rem_frame * rem_frame.adjoint()));
                }
            }
            refined_spaces.push(SampleSpace::new(cells, tol)?);
            layer = next;
        }
        HistorySpace::new(
            self.dynamics.clone(),
            refined_spaces,
            self.initial.clone(),
            tol,
        )
    }

    /// For each nonzero-weight history of a consistent space, tests whether
    /// the line spanned by `ψ_α` is a member of `alg`. Witnesses where it is
    /// not demonstrate that branching refinements can leave the original
    /// algebra.
    pub fn refinement_in_algebra(
        &self,
        alg: &EventAlgebra,
        tol: &Tolerances,
        opts: &HistoryOptions,
    ) -> Result<AlgebraMembershipReport, HistoriesError> {
        let report = self.consistency_report(tol, opts)?;
        if !report.consistent {
            return Err(HistoriesError::NotConsistent {
                max_overlap: report.max_overlap,
            });
        }
        let branches = self.enumerate(opts)?;
        let mut missing = Vec::new();
        for b in &branches {
            if b.weight <= tol.consistency {
                continue;
            }
            let line = Event::span(&[b.vector.clone()], tol)?;
            if alg.membership(&line, tol)?.is_none() {
                missing.push(MissingMember {
                    indices: b.history.indices.clone(),
                    weight: b.weight,
                });
            }
        }
        Ok(AlgebraMembershipReport {
            all_members: missing.is_empty(),
            missing,
        })
    }
}

type CVectorAlias = nalgebra::DVector<C64>;

fn diverges_then_agrees(a: &[usize], b: &[usize]) -> bool {
    let mut diverged = false;
    for (x, y) in a.iter().zip(b.iter()) {
        if diverged && x == y {
            return true;
        }
        if x != y {
            diverged = true;
        }
    }
    false
}

fn validate_mapping(
    fine: &HistorySpace,
    coarse: &HistorySpace,
    mapping: &CoarseMapping,
    tol: &Tolerances,
) -> Result<(), HistoriesError> {
    if fine.n_times() != coarse.n_times() || mapping.len() != fine.n_times() {
        return Err(HistoriesError::InvalidMapping {
            reason: "mapping must cover every time index".into(),
        });
    }
    if fine.ambient_dim() != coarse.ambient_dim() {
        return Err(HistoriesError::InvalidMapping {
            reason: "ambient dimensions differ".into(),
        });
    }
    for (fs, cs) in fine.dynamics.steps().iter().zip(coarse.dynamics.steps()) {
        if op_norm_distance(fs, cs)? > tol.exact {
            return Err(HistoriesError::InvalidMapping {
                reason: "dynamics differ between fine and coarse spaces".into(),
            });
        }
    }
    if fine
        .initial
        .sub(&coarse.initial)
        .map(|d| d.norm())
        .unwrap_or(f64::INFINITY)
        > tol.exact
    {
        return Err(HistoriesError::InvalidMapping {
            reason: "initial states differ".into(),
        });
    }
    for k in 0..fine.n_times() {
        let fine_space = &fine.sample_spaces[k];
        let coarse_space = &coarse.sample_spaces[k];
        if mapping[k].len() != coarse_space.len() {
            return Err(HistoriesError::InvalidMapping {
                reason: format!("time {k}: map rows do not match coarse cells"),
            });
        }
        let mut seen = vec![false; fine_space.len()];
        for (ci, fine_cells) in mapping[k].iter().enumerate() {
            let mut sum = CMatrix::zeros(fine.ambient_dim(), fine.ambient_dim());
            for fi in fine_cells {
                if *fi >= fine_space.len() {
                    return Err(HistoriesError::InvalidMapping {
                        reason: format!("time {k}: fine cell {fi} out of range"),
                    });
                }
                if seen[*fi] {
                    return Err(HistoriesError::InvalidMapping {
                        reason: format!("time {k}: fine cell {fi} used twice"),
                    });
                }
                seen[*fi] = true;
                sum += fine_space.projectors()[*fi].entries();
            }
            let defect = op_norm(&(sum - coarse_space.projectors()[ci].entries()));
            if defect > tol.exact {
                return Err(HistoriesError::InvalidMapping {
                    reason: format!(
                        "time {k}: coarse cell {ci} is not the sum of its fine cells \
                         (defect {defect:.3e})"
                    ),
                });
            }
        }
        if !seen.iter().all(|s| *s) {
            return Err(HistoriesError::InvalidMapping {
                reason: format!("time {k}: some fine cells are not mapped"),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Random generators used by property suites.
// ---------------------------------------------------------------------------

/// Random history space whose Heisenberg projectors are diagonal in one
/// random basis with *nested* index partitions, which forces a branching
/// structure by construction.
pub fn random_branching_space(
    dim: usize,
    n_times: usize,
    max_cells: usize,
    rng: &mut impl rand::Rng,
    tol: &Tolerances,
) -> HistorySpace {
    let basis = crate::random::random_unitary(dim, rng);
    // nested partitions of the index set, coarse to fine
    let mut groups: Vec<Vec<usize>> = vec![(0..dim).collect()];
    let mut partitions: Vec<Vec<Vec<usize>>> = Vec::new();
    for _ in 0..n_times {
        let mut next: Vec<Vec<usize>> = Vec::new();
        for g in &groups {
            if g.len() >= 2 && next.len() + groups.len() < max_cells && rng.random::<f64>() < 0.7 {
                let cut = rng.random_range(1..g.len());
                next.push(g[..cut].to_vec());
                next.push(g[cut..].to_vec());
            } else {
                next.push(g.clone());
            }
        }
        groups = next;
        partitions.push(groups.clone());
    }
    build_codiagonal_space(dim, &basis, &partitions, rng, tol)
}

/// Random history space whose Heisenberg projectors are diagonal in one
/// random basis with *independent* index partitions per time. Chains then
/// project onto disjoint index sets, so the space is exactly consistent, but
/// diverge-then-agree patterns generally carry weight.
pub fn random_consistent_space(
    dim: usize,
    n_times: usize,
    max_cells: usize,
    rng: &mut impl rand::Rng,
    tol: &Tolerances,
) -> HistorySpace {
    let basis = crate::random::random_unitary(dim, rng);
    let mut partitions = Vec::with_capacity(n_times);
    for _ in 0..n_times {
        let ranks = crate::random::random_block_ranks(dim, 2.min(dim), max_cells, rng);
        let mut indices: Vec<usize> = (0..dim).collect();
        for i in 0..dim {
            let j = rng.random_range(i..dim);
            indices.swap(i, j);
        }
        let mut groups = Vec::new();
        let mut at = 0;
        for r in ranks {
            groups.push(indices[at..at + r].to_vec());
            at += r;
        }
        partitions.push(groups);
    }
    build_codiagonal_space(dim, &basis, &partitions, rng, tol)
}

fn build_codiagonal_space(
    dim: usize,
    basis: &CMatrix,
    partitions: &[Vec<Vec<usize>>],
    rng: &mut impl rand::Rng,
    tol: &Tolerances,
) -> HistorySpace {
    let n_times = partitions.len();
    let times: Vec<f64> = (0..=n_times).map(|k| k as f64).collect();
    let steps: Vec<Operator> = (0..n_times)
        .map(|_| {
            Operator::unitary(crate::random::random_unitary(dim, rng), tol)
                .expect("random unitary validates")
        })
        .collect();
    let dynamics = Dynamics::from_operators(times, steps).expect("valid dynamics");
    // Heisenberg projector diagonal on `basis` columns; Schrödinger-picture
    // cell at t_k is the conjugation by W_k
    let mut spaces = Vec::with_capacity(n_times);
    let mut w = CMatrix::identity(dim, dim);
    for (k, groups) in partitions.iter().enumerate() {
        w = dynamics.steps()[k].entries() * w;
        let mut cells = Vec::with_capacity(groups.len());
        for (gi, group) in groups.iter().enumerate() {
            let mut heis = CMatrix::zeros(dim, dim);
            for idx in group {
                let col = basis.column(*idx);
                heis += col * col.adjoint();
            }
            let schr = &w * heis * w.adjoint();
            cells.push((format!("s{k}c{gi}"), schr));
        }
        spaces.push(SampleSpace::new(cells, tol).expect("codiagonal cells validate"));
    }
    let initial = crate::random::random_unit_state(dim, rng);
    HistorySpace::new(dynamics, spaces, initial, tol).expect("construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{rng_from_seed, random_unit_state};

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn opts() -> HistoryOptions {
        HistoryOptions::default()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn line_projector(dim: usize, k: usize) -> CMatrix {
        let mut m = CMatrix::zeros(dim, dim);
        m[(k, k)] = c(1.0, 0.0);
        m
    }

    /// Computational-basis measurement at a single time, trivial dynamics.
    fn single_time_space(initial: StateVector) -> HistorySpace {
        let dim = initial.dim();
        let cells = (0..dim)
            .map(|k| (format!("c{k}"), line_projector(dim, k)))
            .collect();
        HistorySpace::new(
            Dynamics::trivial(dim, 1),
            vec![SampleSpace::new(cells, &tol()).unwrap()],
            initial,
            &tol(),
        )
        .unwrap()
    }

    /// Two-time qubit space that recombines branches: cells at t1 are the
    /// ± basis, cells at t2 the computational basis, trivial dynamics.
    fn recombining_space() -> HistorySpace {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = StateVector::new(vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        let minus = StateVector::new(vec![c(s, 0.0), c(-s, 0.0)]).unwrap();
        let proj =
            |v: &StateVector| v.amplitudes() * v.amplitudes().adjoint();
        let t1 = SampleSpace::new(
            vec![("plus".into(), proj(&plus)), ("minus".into(), proj(&minus))],
            &tol(),
        )
        .unwrap();
        let t2 = SampleSpace::new(
            vec![
                ("zero".into(), line_projector(2, 0)),
                ("one".into(), line_projector(2, 1)),
            ],
            &tol(),
        )
        .unwrap();
        HistorySpace::new(
            Dynamics::trivial(2, 2),
            vec![t1, t2],
            StateVector::basis(2, 0),
            &tol(),
        )
        .unwrap()
    }

    /// Dim-4 two-time space with crossing rank-2 cells: consistent but not
    /// branching for the uniform initial state.
    fn crossing_space() -> HistorySpace {
        let rows = SampleSpace::new(
            vec![
                ("r0".into(), line_projector(4, 0) + line_projector(4, 1)),
                ("r1".into(), line_projector(4, 2) + line_projector(4, 3)),
            ],
            &tol(),
        )
        .unwrap();
        let cols = SampleSpace::new(
            vec![
                ("c0".into(), line_projector(4, 0) + line_projector(4, 2)),
                ("c1".into(), line_projector(4, 1) + line_projector(4, 3)),
            ],
            &tol(),
        )
        .unwrap();
        let initial = StateVector::new(vec![c(0.5, 0.0); 4]).unwrap();
        HistorySpace::new(
            Dynamics::trivial(4, 2),
            vec![rows, cols],
            initial,
            &tol(),
        )
        .unwrap()
    }

    #[test]
    fn heisenberg_projector_trivial_dynamics_is_unchanged() {
        let hs = single_time_space(StateVector::basis(2, 0));
        let p = hs.heisenberg_projector(1, 0).unwrap();
        assert!(op_norm(&(p.entries() - line_projector(2, 0))) <= 1e-12);
    }

    #[test]
    fn heisenberg_projector_stays_idempotent_under_unitary_steps() {
        let mut rng = rng_from_seed(5);
        let u = crate::random::random_unitary(2, &mut rng);
        let dynamics = Dynamics::from_operators(
            vec![0.0, 1.0],
            vec![Operator::unitary(u, &tol()).unwrap()],
        )
        .unwrap();
        let space = SampleSpace::new(
            vec![
                ("c0".into(), line_projector(2, 0)),
                ("c1".into(), line_projector(2, 1)),
            ],
            &tol(),
        )
        .unwrap();
        let hs = HistorySpace::new(dynamics, vec![space], StateVector::basis(2, 0), &tol())
            .unwrap();
        let p = hs.heisenberg_projector(1, 0).unwrap().entries().clone();
        assert!(op_norm(&(&p * &p - &p)) <= 1e-12);
    }

    #[test]
    fn heisenberg_projector_matches_hand_rotation_oracle() {
        // rotation by angle θ in the real plane; conjugating |0><0| gives
        // the projector onto (cos θ, -sin θ) — computed here by hand
        let theta = 0.4_f64;
        let rot = CMatrix::from_row_slice(
            2,
            2,
            &[
                c(theta.cos(), 0.0),
                c(-theta.sin(), 0.0),
                c(theta.sin(), 0.0),
                c(theta.cos(), 0.0),
            ],
        );
        let dynamics = Dynamics::from_operators(
            vec![0.0, 1.0],
            vec![Operator::unitary(rot, &tol()).unwrap()],
        )
        .unwrap();
        let space = SampleSpace::new(
            vec![
                ("c0".into(), line_projector(2, 0)),
                ("c1".into(), line_projector(2, 1)),
            ],
            &tol(),
        )
        .unwrap();
        let hs = HistorySpace::new(dynamics, vec![space], StateVector::basis(2, 0), &tol())
            .unwrap();
        let p = hs.heisenberg_projector(1, 0).unwrap();
        // oracle: u = R^H e0 = (cos θ, -sin θ); P = u u^H entrywise
        let (ct, st) = (theta.cos(), theta.sin());
        let oracle = CMatrix::from_row_slice(
            2,
            2,
            &[
                c(ct * ct, 0.0),
                c(-ct * st, 0.0),
                c(-ct * st, 0.0),
                c(st * st, 0.0),
            ],
        );
        assert!(op_norm(&(p.entries() - oracle)) <= 1e-12);
    }

    #[test]
    fn branch_vectors_of_single_time_measurement() {
        let hs = single_time_space(StateVector::basis(2, 0));
        let b0 = hs.branch_vector(&History::new(vec![0])).unwrap();
        let b1 = hs.branch_vector(&History::new(vec![1])).unwrap();
        assert!(b0.sub(&StateVector::basis(2, 0)).unwrap().norm() <= 1e-12);
        assert!(b1.norm() <= 1e-12);
    }

    #[test]
    fn weights_from_three_four_five_state() {
        let psi = StateVector::new(vec![c(0.6, 0.0), c(0.8, 0.0)]).unwrap();
        let hs = single_time_space(psi);
        let w0 = hs.history_weight(&History::new(vec![0])).unwrap();
        let w1 = hs.history_weight(&History::new(vec![1])).unwrap();
        assert!((w0 - 0.36).abs() <= 1e-12);
        assert!((w1 - 0.64).abs() <= 1e-12);
    }

    #[test]
    fn branch_vectors_sum_to_initial_state() {
        let mut rng = rng_from_seed(23);
        let hs = random_consistent_space(8, 3, 3, &mut rng, &tol());
        let branches = hs.enumerate(&opts()).unwrap();
        let mut sum = StateVector::zero(8);
        for b in &branches {
            sum = sum.add(&b.vector).unwrap();
        }
        assert!(sum.sub(hs.initial()).unwrap().norm() <= 1e-10);
        let total: f64 = branches.iter().map(|b| b.weight).sum();
        assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn single_time_space_is_always_consistent() {
        let mut rng = rng_from_seed(17);
        let hs = single_time_space(random_unit_state(5, &mut rng));
        let report = hs.consistency_report(&tol(), &opts()).unwrap();
        assert!(report.consistent);
        assert!(report.offenders.is_empty());
    }

    #[test]
    fn recombining_space_is_inconsistent_with_oracle_overlap() {
        // brute-force oracle: build the two interfering branch vectors by
        // direct matrix products and freeze their overlap
        let hs = recombining_space();
        let b_pz = hs.branch_vector(&History::new(vec![0, 0])).unwrap();
        let b_mz = hs.branch_vector(&History::new(vec![1, 0])).unwrap();
        let oracle = b_pz.inner(&b_mz).norm();
        assert!((oracle - 0.25).abs() <= 1e-12);
        let report = hs.consistency_report(&tol(), &opts()).unwrap();
        assert!(!report.consistent);
        assert!((report.max_overlap - 0.25).abs() <= 1e-12);
        assert_eq!(report.offenders[0].overlap, report.max_overlap);
    }

    #[test]
    fn additivity_identity_mapping_is_exact() {
        let hs = crossing_space();
        let mapping: CoarseMapping = vec![vec![vec![0], vec![1]], vec![vec![0], vec![1]]];
        let report =
            HistorySpace::additivity_check(&hs, &hs, &mapping, &tol(), &opts()).unwrap();
        assert!(report.max_violation <= 1e-12);
    }

    #[test]
    fn additivity_violated_for_recombining_space() {
        // coarsen away the first measurement: the coarse weight of ending in
        // cell 0 is 1, the fine weights sum to 1/2; oracle by enumeration
        let fine = recombining_space();
        let full = SampleSpace::new(vec![("all".into(), CMatrix::identity(2, 2))], &tol())
            .unwrap();
        let t2 = fine.sample_spaces()[1].clone();
        let coarse = HistorySpace::new(
            Dynamics::trivial(2, 2),
            vec![full, t2],
            StateVector::basis(2, 0),
            &tol(),
        )
        .unwrap();
        let mapping: CoarseMapping = vec![vec![vec![0, 1]], vec![vec![0], vec![1]]];
        let report =
            HistorySpace::additivity_check(&fine, &coarse, &mapping, &tol(), &opts()).unwrap();
        assert!((report.max_violation - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn additivity_small_for_consistent_space() {
        let mut rng = rng_from_seed(31);
        let fine = random_consistent_space(6, 2, 3, &mut rng, &tol());
        // merge all cells of t1 into one coarse cell
        let t1 = &fine.sample_spaces()[0];
        let mut sum = CMatrix::zeros(6, 6);
        for p in t1.projectors() {
            sum += p.entries();
        }
        let coarse_t1 = SampleSpace::new(vec![("all".into(), sum)], &tol()).unwrap();
        let coarse = HistorySpace::new(
            fine.dynamics().clone(),
            vec![coarse_t1, fine.sample_spaces()[1].clone()],
            fine.initial().clone(),
            &tol(),
        )
        .unwrap();
        let mapping: CoarseMapping = vec![
            vec![(0..t1.len()).collect()],
            vec![vec![0], vec![1], vec![2]][..fine.sample_spaces()[1].len()].to_vec(),
        ];
        let mapping = {
            let mut m = mapping;
            m[1] = (0..fine.sample_spaces()[1].len()).map(|i| vec![i]).collect();
            m
        };
        let report =
            HistorySpace::additivity_check(&fine, &coarse, &mapping, &tol(), &opts()).unwrap();
        assert!(report.max_violation <= 1e-9);
    }

    #[test]
    fn single_time_space_is_branching() {
        let hs = single_time_space(StateVector::basis(3, 1));
        assert!(hs.is_branching(&tol(), &opts()).unwrap());
    }

    #[test]
    fn repeated_measurement_is_branching() {
        // measure the computational basis twice with trivial dynamics
        let cells = |dim: usize| -> Vec<(String, CMatrix)> {
            (0..dim)
                .map(|k| (format!("c{k}"), line_projector(dim, k)))
                .collect()
        };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = StateVector::new(vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        let hs = HistorySpace::new(
            Dynamics::trivial(2, 2),
            vec![
                SampleSpace::new(cells(2), &tol()).unwrap(),
                SampleSpace::new(cells(2), &tol()).unwrap(),
            ],
            psi,
            &tol(),
        )
        .unwrap();
        assert!(hs.is_branching(&tol(), &opts()).unwrap());
        assert!(hs.consistency_report(&tol(), &opts()).unwrap().consistent);
    }

    #[test]
    fn recombining_space_is_not_branching() {
        let hs = recombining_space();
        assert!(!hs.is_branching(&tol(), &opts()).unwrap());
        // exhibit the diverge/agree pair with both weights visible
        let w_pz = hs.history_weight(&History::new(vec![0, 0])).unwrap();
        let w_mz = hs.history_weight(&History::new(vec![1, 0])).unwrap();
        assert!(w_pz > 0.1 && w_mz > 0.1);
    }

    #[test]
    fn crossing_space_is_consistent_but_not_branching() {
        let hs = crossing_space();
        assert!(hs.consistency_report(&tol(), &opts()).unwrap().consistent);
        assert!(!hs.is_branching(&tol(), &opts()).unwrap());
    }

    #[test]
    fn bc_refine_rejects_inconsistent_space() {
        let hs = recombining_space();
        assert!(matches!(
            hs.bc_refine(&tol(), &opts()),
            Err(HistoriesError::NotConsistent { .. })
        ));
    }

    #[test]
    fn bc_refine_turns_crossing_space_into_branching_refinement() {
        let hs = crossing_space();
        let refined = hs.bc_refine(&tol(), &opts()).unwrap();
        assert!(refined.is_branching(&tol(), &opts()).unwrap());
        assert!(refined
            .consistency_report(&tol(), &opts())
            .unwrap()
            .consistent);
        for k in 0..hs.n_times() {
            let fine = refined.sample_spaces()[k].to_partition(&tol()).unwrap();
            let coarse = hs.sample_spaces()[k].to_partition(&tol()).unwrap();
            assert!(crate::events::is_refinement(&fine, &coarse, &tol()).unwrap());
        }
    }

    #[test]
    fn bc_refine_keeps_branching_space_branching() {
        let mut rng = rng_from_seed(41);
        let hs = random_branching_space(8, 2, 4, &mut rng, &tol());
        assert!(hs.is_branching(&tol(), &opts()).unwrap());
        let refined = hs.bc_refine(&tol(), &opts()).unwrap();
        assert!(refined.is_branching(&tol(), &opts()).unwrap());
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let hs = crossing_space();
        let tight = HistoryOptions {
            cap: 3,
            weight_floor: None,
        };
        assert!(matches!(
            hs.enumerate(&tight),
            Err(HistoriesError::EnumerationCap { total: 4, cap: 3 })
        ));
    }

    #[test]
    fn weight_floor_prunes_and_is_flagged() {
        let psi = StateVector::new(vec![c(0.6, 0.0), c(0.8, 0.0)]).unwrap();
        let hs = single_time_space(psi);
        let floored = HistoryOptions {
            cap: 4096,
            weight_floor: Some(0.5),
        };
        let branches = hs.enumerate(&floored).unwrap();
        assert_eq!(branches.len(), 1);
        let report = hs.consistency_report(&tol(), &floored).unwrap();
        assert_eq!(report.weight_floor, Some(0.5));
    }

    #[test]
    fn algebra_membership_failure_for_rotated_branches() {
        // branch vectors along ± lines against the computational-basis
        // algebra: spans are not unions of blocks
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = StateVector::new(vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        let minus = StateVector::new(vec![c(s, 0.0), c(-s, 0.0)]).unwrap();
        let proj = |v: &StateVector| v.amplitudes() * v.amplitudes().adjoint();
        let space = SampleSpace::new(
            vec![("plus".into(), proj(&plus)), ("minus".into(), proj(&minus))],
            &tol(),
        )
        .unwrap();
        let hs = HistorySpace::new(
            Dynamics::trivial(2, 1),
            vec![space],
            StateVector::basis(2, 0),
            &tol(),
        )
        .unwrap();
        let alg = EventAlgebra::from_partition(
            Partition::new(
                vec![
                    (
                        "c0".into(),
                        Event::span(&[StateVector::basis(2, 0)], &tol()).unwrap(),
                    ),
                    (
                        "c1".into(),
                        Event::span(&[StateVector::basis(2, 1)], &tol()).unwrap(),
                    ),
                ],
                &tol(),
            )
            .unwrap(),
        );
        let report = hs.refinement_in_algebra(&alg, &tol(), &opts()).unwrap();
        assert!(!report.all_members);
        assert_eq!(report.missing.len(), 2);
    }

    #[test]
    fn algebra_membership_holds_when_branches_are_atoms() {
        let hs = single_time_space(StateVector::new(vec![c(0.6, 0.0), c(0.8, 0.0)]).unwrap());
        let alg = EventAlgebra::from_partition(
            Partition::new(
                vec![
                    (
                        "c0".into(),
                        Event::span(&[StateVector::basis(2, 0)], &tol()).unwrap(),
                    ),
                    (
                        "c1".into(),
                        Event::span(&[StateVector::basis(2, 1)], &tol()).unwrap(),
                    ),
                ],
                &tol(),
            )
            .unwrap(),
        );
        let report = hs.refinement_in_algebra(&alg, &tol(), &opts()).unwrap();
        assert!(report.all_members);
    }

    #[test]
    fn random_membership_report_matches_direct_containment_oracle() {
        let mut rng = rng_from_seed(59);
        for _ in 0..10 {
            let hs = random_consistent_space(4, 2, 2, &mut rng, &tol());
            let p = crate::random::random_partition(&[2, 2], &mut rng, &tol());
            let alg = EventAlgebra::from_partition(p);
            let report = hs.refinement_in_algebra(&alg, &tol(), &opts()).unwrap();
            // oracle: a line is a member iff exactly one block contains it
            // and that block is itself the line
            let branches = hs.enumerate(&opts()).unwrap();
            for b in branches.iter().filter(|b| b.weight > tol().consistency) {
                let line = Event::span(&[b.vector.clone()], &tol()).unwrap();
                let oracle_member = alg.atoms().blocks().iter().any(|blk| {
                    blk.contains(&line, &tol()).unwrap() && blk.rank() == 1
                });
                let reported_missing = report
                    .missing
                    .iter()
                    .any(|m| m.indices == b.history.indices);
                assert_eq!(oracle_member, !reported_missing);
            }
        }
    }
}
