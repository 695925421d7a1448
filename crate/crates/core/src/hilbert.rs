//! Finite-dimensional complex Hilbert-space kernel.
//!
//! States are dense complex vectors, operators dense complex matrices, and
//! subspaces ([`Event`]) are stored as orthonormal frames with a cached
//! projector. Rank decisions always go through singular values compared
//! against an explicit [`Tolerances`] block, so the numeric thresholds used
//! by every downstream check are visible and testable.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Dense complex matrix used throughout the crate.
pub type CMatrix = DMatrix<C64>;
/// Dense complex vector used throughout the crate.
pub type CVector = DVector<C64>;

#[derive(Debug, Error)]
pub enum HilbertError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("matrix is not unitary: defect {defect:.3e}")]
    NotUnitary { defect: f64 },
    #[error("matrix is not a projector: defect {defect:.3e}")]
    NotProjector { defect: f64 },
    #[error("frame columns are not orthonormal: defect {defect:.3e}")]
    NotOrthonormal { defect: f64 },
    #[error("zero vector not allowed here")]
    ZeroVector,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid tolerances: {reason}")]
    InvalidTolerances { reason: String },
}

/// Numeric thresholds shared by every module.
///
/// `rank <= exact <= consistency` is enforced: rank cutoffs sit below the
/// orthogonality scale, which sits below the (graded) consistency scale.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    /// Orthogonality / equality scale for constructed objects.
    pub exact: f64,
    /// Graded scale for history overlap and branching decisions.
    pub consistency: f64,
    /// Singular-value cutoff for rank decisions.
    pub rank: f64,
    /// Scale below which "almost orthogonal" frames count as interesting.
    pub near_orth: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            exact: 1e-10,
            consistency: 1e-8,
            rank: 1e-12,
            near_orth: 1e-3,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), HilbertError> {
        let all = [self.exact, self.consistency, self.rank, self.near_orth];
        if all.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(HilbertError::InvalidTolerances {
                reason: "all tolerances must be strictly positive and finite".into(),
            });
        }
        if !(self.rank <= self.exact && self.exact <= self.consistency) {
            return Err(HilbertError::InvalidTolerances {
                reason: "require rank <= exact <= consistency".into(),
            });
        }
        Ok(())
    }
}

/// A vector in `C^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    data: CVector,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self, HilbertError> {
        if amplitudes.is_empty() {
            return Err(HilbertError::EmptyInput);
        }
        Ok(StateVector {
            data: CVector::from_vec(amplitudes),
        })
    }

    pub fn from_cvector(data: CVector) -> Result<Self, HilbertError> {
        if data.is_empty() {
            return Err(HilbertError::EmptyInput);
        }
        Ok(StateVector { data })
    }

    /// Standard basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index out of range");
        let mut data = CVector::zeros(dim);
        data[k] = C64::new(1.0, 0.0);
        StateVector { data }
    }

    pub fn zero(dim: usize) -> Self {
        assert!(dim >= 1);
        StateVector {
            data: CVector::zeros(dim),
        }
    }

    pub fn from_reals(values: &[f64]) -> Result<Self, HilbertError> {
        Self::new(values.iter().map(|v| C64::new(*v, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// `<self, other>` with the first argument conjugated.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.data.dotc(&other.data)
    }

    pub fn scale(&self, factor: C64) -> StateVector {
        StateVector {
            data: &self.data * factor,
        }
    }

    pub fn add(&self, other: &StateVector) -> Result<StateVector, HilbertError> {
        check_dim(self.dim(), other.dim())?;
        Ok(StateVector {
            data: &self.data + &other.data,
        })
    }

    pub fn sub(&self, other: &StateVector) -> Result<StateVector, HilbertError> {
        check_dim(self.dim(), other.dim())?;
        Ok(StateVector {
            data: &self.data - &other.data,
        })
    }

    pub fn normalized(&self) -> Result<StateVector, HilbertError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(HilbertError::ZeroVector);
        }
        Ok(StateVector {
            data: &self.data / C64::new(n, 0.0),
        })
    }
}

/// Tag recording what an [`Operator`] is expected to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    General,
    Unitary,
    Projector,
}

/// A dense complex matrix, optionally validated as unitary or projector.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    entries: CMatrix,
    kind: OperatorKind,
}

impl Operator {
    pub fn general(entries: CMatrix) -> Self {
        Operator {
            entries,
            kind: OperatorKind::General,
        }
    }

    /// Validates `U^H U = I` within `tol.exact`. Accepts rectangular
    /// isometries (orthonormal columns), not just square unitaries.
    pub fn unitary(entries: CMatrix, tol: &Tolerances) -> Result<Self, HilbertError> {
        let defect = isometry_defect(&entries);
        if defect > tol.exact {
            return Err(HilbertError::NotUnitary { defect });
        }
        Ok(Operator {
            entries,
            kind: OperatorKind::Unitary,
        })
    }

    /// Validates Hermiticity and idempotence within `tol.exact`.
    pub fn projector(entries: CMatrix, tol: &Tolerances) -> Result<Self, HilbertError> {
        if entries.nrows() != entries.ncols() {
            return Err(HilbertError::ShapeMismatch {
                expected_rows: entries.nrows(),
                expected_cols: entries.nrows(),
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        let herm = op_norm(&(&entries - entries.adjoint()));
        let idem = op_norm(&(&entries * &entries - &entries));
        let defect = herm.max(idem);
        if defect > tol.exact {
            return Err(HilbertError::NotProjector { defect });
        }
        Ok(Operator {
            entries,
            kind: OperatorKind::Projector,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Operator {
            entries: CMatrix::identity(dim, dim),
            kind: OperatorKind::Unitary,
        }
    }

    pub fn dim_in(&self) -> usize {
        self.entries.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.entries.nrows()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector, HilbertError> {
        check_dim(self.dim_in(), v.dim())?;
        Ok(StateVector {
            data: &self.entries * v.amplitudes(),
        })
    }

    /// `self * other` (apply `other` first).
    pub fn compose(&self, other: &Operator) -> Result<Operator, HilbertError> {
        check_dim(self.dim_in(), other.dim_out())?;
        let kind = match (self.kind, other.kind) {
            (OperatorKind::Unitary, OperatorKind::Unitary) => OperatorKind::Unitary,
            _ => OperatorKind::General,
        };
        Ok(Operator {
            entries: &self.entries * &other.entries,
            kind,
        })
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            entries: self.entries.adjoint(),
            kind: match self.kind {
                OperatorKind::Projector => OperatorKind::Projector,
                OperatorKind::Unitary => OperatorKind::Unitary,
                OperatorKind::General => OperatorKind::General,
            },
        }
    }
}

/// `‖A − B‖` in operator norm (largest singular value of the difference).
pub fn op_norm_distance(a: &Operator, b: &Operator) -> Result<f64, HilbertError> {
    if a.dim_in() != b.dim_in() || a.dim_out() != b.dim_out() {
        return Err(HilbertError::ShapeMismatch {
            expected_rows: a.dim_out(),
            expected_cols: a.dim_in(),
            rows: b.dim_out(),
            cols: b.dim_in(),
        });
    }
    Ok(op_norm(&(a.entries() - b.entries())))
}

/// Largest singular value; 0 for empty matrices.
///
/// Computed as the square root of the top eigenvalue of the Gram matrix.
/// The relative error of the result is at machine precision, which is what
/// the orthogonality thresholds need. (nalgebra's complex SVD is not
/// accurate enough for these decisions, so it is not used anywhere.)
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = if m.ncols() <= m.nrows() {
        m.adjoint() * m
    } else {
        m * m.adjoint()
    };
    let eigen = nalgebra::SymmetricEigen::new(gram);
    eigen
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .max(0.0)
        .sqrt()
}

/// `‖U^H U − I‖` for a candidate isometry.
pub fn isometry_defect(m: &CMatrix) -> f64 {
    let r = m.ncols();
    if r == 0 {
        return 0.0;
    }
    op_norm(&(m.adjoint() * m - CMatrix::identity(r, r)))
}

/// Singular value decomposition by one-sided Jacobi orthogonalization.
///
/// Returns left singular vectors, singular values (descending) and right
/// singular vectors with `m = u * diag(sigma) * v^H`. Columns of `u` for
/// zero singular values are zero. Jacobi keeps high relative accuracy for
/// small singular values, so rank cutoffs at `tol.rank` are meaningful.
pub(crate) fn jacobi_svd(m: &CMatrix) -> (CMatrix, Vec<f64>, CMatrix) {
    let (d, r) = (m.nrows(), m.ncols());
    let mut w = m.clone();
    let mut v = CMatrix::identity(r, r);
    if r > 1 {
        let eps = 1e-15_f64;
        for _sweep in 0..64 {
            let mut rotated = false;
            for p in 0..r - 1 {
                for q in p + 1..r {
                    let wp = w.column(p).into_owned();
                    let wq = w.column(q).into_owned();
                    let alpha = wp.norm_squared();
                    let beta = wq.norm_squared();
                    let gamma = wp.dotc(&wq);
                    let g = gamma.norm();
                    if g <= eps * (alpha * beta).sqrt() || g == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let phase = gamma / g;
                    let tau = (beta - alpha) / (2.0 * g);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let cth = 1.0 / (1.0 + t * t).sqrt();
                    let sth = cth * t;
                    let s_pos = phase * sth;
                    let s_neg = phase.conj() * sth;
                    // right-multiply (p,q) plane by [[c, s·e^{iφ}], [−s·e^{−iφ}, c]]
                    let new_p = &wp * C64::new(cth, 0.0) - &wq * s_neg;
                    let new_q = &wp * s_pos + &wq * C64::new(cth, 0.0);
                    w.set_column(p, &new_p);
                    w.set_column(q, &new_q);
                    let vp = v.column(p).into_owned();
                    let vq = v.column(q).into_owned();
                    let new_vp = &vp * C64::new(cth, 0.0) - &vq * s_neg;
                    let new_vq = &vp * s_pos + &vq * C64::new(cth, 0.0);
                    v.set_column(p, &new_vp);
                    v.set_column(q, &new_vq);
                }
            }
            if !rotated {
                break;
            }
        }
    }
    let mut order: Vec<usize> = (0..r).collect();
    let norms: Vec<f64> = (0..r).map(|j| w.column(j).norm()).collect();
    order.sort_by(|a, b| norms[*b].partial_cmp(&norms[*a]).unwrap());
    let mut u = CMatrix::zeros(d, r);
    let mut sigma = Vec::with_capacity(r);
    let mut v_sorted = CMatrix::zeros(r, r);
    for (out, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > 0.0 {
            u.set_column(out, &(w.column(j).into_owned() / C64::new(s, 0.0)));
        }
        v_sorted.set_column(out, &v.column(j).into_owned());
    }
    (u, sigma, v_sorted)
}

/// Orthonormal basis for the column span of `m`, keeping singular values
/// above `rank_tol`.
pub fn orthonormal_span(m: &CMatrix, rank_tol: f64) -> CMatrix {
    let d = m.nrows();
    if m.ncols() == 0 {
        return CMatrix::zeros(d, 0);
    }
    let (u, sigma, _) = jacobi_svd(m);
    let rank = sigma.iter().filter(|s| **s > rank_tol).count();
    u.columns(0, rank).into_owned()
}

/// `exp(i t H)` for Hermitian `H`, computed by eigendecomposition so that
/// the result is unitary to machine precision.
pub fn unitary_exp_i_hermitian(h: &CMatrix, t: f64) -> CMatrix {
    assert_eq!(h.nrows(), h.ncols(), "generator must be square");
    let se = nalgebra::SymmetricEigen::new(h.clone());
    let phases = CVector::from_iterator(
        se.eigenvalues.len(),
        se.eigenvalues
            .iter()
            .map(|l| (C64::new(0.0, 1.0) * *l * t).exp()),
    );
    &se.eigenvectors * CMatrix::from_diagonal(&phases) * se.eigenvectors.adjoint()
}

/// A subspace of `C^d`: an orthonormal frame plus its cached projector.
///
/// The zero subspace is a frame with no columns; the full space has a
/// square frame.
#[derive(Debug, Clone)]
pub struct Event {
    ambient_dim: usize,
    frame: CMatrix,
    projector: CMatrix,
}

impl Event {
    /// The zero subspace `{0}`.
    pub fn zero(ambient_dim: usize) -> Self {
        assert!(ambient_dim >= 1);
        Event {
            ambient_dim,
            frame: CMatrix::zeros(ambient_dim, 0),
            projector: CMatrix::zeros(ambient_dim, ambient_dim),
        }
    }

    /// The whole space.
    pub fn full(ambient_dim: usize) -> Self {
        assert!(ambient_dim >= 1);
        Event {
            ambient_dim,
            frame: CMatrix::identity(ambient_dim, ambient_dim),
            projector: CMatrix::identity(ambient_dim, ambient_dim),
        }
    }

    /// Builds an event from a frame whose columns must already be
    /// orthonormal within `tol.exact`.
    pub fn from_frame(frame: CMatrix, tol: &Tolerances) -> Result<Self, HilbertError> {
        if frame.nrows() == 0 {
            return Err(HilbertError::EmptyInput);
        }
        let defect = isometry_defect(&frame);
        if defect > tol.exact {
            return Err(HilbertError::NotOrthonormal { defect });
        }
        let projector = &frame * frame.adjoint();
        Ok(Event {
            ambient_dim: frame.nrows(),
            frame,
            projector,
        })
    }

    /// Event spanned by the given vectors; rank decided by singular values
    /// above `tol.rank`.
    pub fn span(vectors: &[StateVector], tol: &Tolerances) -> Result<Self, HilbertError> {
        let first = vectors.first().ok_or(HilbertError::EmptyInput)?;
        let dim = first.dim();
        for v in vectors {
            check_dim(dim, v.dim())?;
        }
        let mut m = CMatrix::zeros(dim, vectors.len());
        for (j, v) in vectors.iter().enumerate() {
            m.set_column(j, v.amplitudes());
        }
        Ok(Self::from_orthonormal(orthonormal_span(&m, tol.rank)))
    }

    /// Event spanned by the columns of a matrix.
    pub fn span_of_matrix(m: &CMatrix, tol: &Tolerances) -> Self {
        Self::from_orthonormal(orthonormal_span(m, tol.rank))
    }

    fn from_orthonormal(frame: CMatrix) -> Self {
        let ambient_dim = frame.nrows();
        let projector = if frame.ncols() == 0 {
            CMatrix::zeros(ambient_dim, ambient_dim)
        } else {
            &frame * frame.adjoint()
        };
        Event {
            ambient_dim,
            frame,
            projector,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank(&self) -> usize {
        self.frame.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.rank() == 0
    }

    pub fn frame(&self) -> &CMatrix {
        &self.frame
    }

    pub fn projector(&self) -> &CMatrix {
        &self.projector
    }

    pub fn project(&self, v: &StateVector) -> Result<StateVector, HilbertError> {
        check_dim(self.ambient_dim, v.dim())?;
        Ok(StateVector {
            data: &self.projector * v.amplitudes(),
        })
    }

    /// Conjunction: intersection of subspaces, computed from the principal
    /// angles between the two frames. Directions whose singular value in
    /// `P_E P_F` exceeds `1 − tol.rank` belong to the intersection.
    pub fn meet(&self, other: &Event, tol: &Tolerances) -> Result<Event, HilbertError> {
        check_dim(self.ambient_dim, other.ambient_dim)?;
        if self.is_zero() || other.is_zero() {
            return Ok(Event::zero(self.ambient_dim));
        }
        let product = &self.projector * &other.projector;
        let (u, sigma, _) = jacobi_svd(&product);
        let rank = sigma.iter().filter(|s| **s > 1.0 - tol.rank).count();
        Ok(Event::from_orthonormal(u.columns(0, rank).into_owned()))
    }

    /// Disjunction: span of the union.
    pub fn join(&self, other: &Event, tol: &Tolerances) -> Result<Event, HilbertError> {
        check_dim(self.ambient_dim, other.ambient_dim)?;
        let mut m = CMatrix::zeros(self.ambient_dim, self.rank() + other.rank());
        for j in 0..self.rank() {
            m.set_column(j, &self.frame.column(j).into_owned());
        }
        for j in 0..other.rank() {
            m.set_column(self.rank() + j, &other.frame.column(j).into_owned());
        }
        Ok(Event::span_of_matrix(&m, tol))
    }

    /// Orthogonal complement.
    pub fn ortho(&self, tol: &Tolerances) -> Event {
        let complement =
            CMatrix::identity(self.ambient_dim, self.ambient_dim) - &self.projector;
        Event::span_of_matrix(&complement, tol)
    }

    /// True iff `‖P_E P_F‖ <= tol.exact`.
    pub fn is_orthogonal(&self, other: &Event, tol: &Tolerances) -> Result<bool, HilbertError> {
        check_dim(self.ambient_dim, other.ambient_dim)?;
        Ok(op_norm(&(&self.projector * &other.projector)) <= tol.exact)
    }

    /// Containment `other ⊆ self`, tested as `‖(1 − P_self) P_other‖ <= tol.exact`.
    pub fn contains(&self, other: &Event, tol: &Tolerances) -> Result<bool, HilbertError> {
        check_dim(self.ambient_dim, other.ambient_dim)?;
        let residual = (CMatrix::identity(self.ambient_dim, self.ambient_dim)
            - &self.projector)
            * &other.projector;
        Ok(op_norm(&residual) <= tol.exact)
    }

    /// Projector distance `‖P_E − P_F‖`; zero iff the events coincide.
    pub fn distance(&self, other: &Event) -> Result<f64, HilbertError> {
        check_dim(self.ambient_dim, other.ambient_dim)?;
        Ok(op_norm(&(&self.projector - &other.projector)))
    }

    /// The projector as an [`Operator`] value.
    pub fn projector_op(&self) -> Operator {
        Operator {
            entries: self.projector.clone(),
            kind: OperatorKind::Projector,
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), HilbertError> {
    if expected != got {
        return Err(HilbertError::DimensionMismatch { expected, got });
    }
    Ok(())
}
