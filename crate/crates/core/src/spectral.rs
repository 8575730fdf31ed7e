//! Closed-form spectral decomposition of 2×2 correlation matrices and the
//! ZCA-cor whitening blocks built from them.
//!
//! Every matrix handled here has the shape `[[1, r], [r, 1]]`, whose
//! eigenvectors are fixed at `(1, 1)/√2` and `(1, -1)/√2` with eigenvalues
//! `1 + r` and `1 - r`. The inverse square root therefore has the closed form
//!
//! ```text
//! w11 = ((1 + r)^(-1/2) + (1 - r)^(-1/2)) / 2
//! w12 = ((1 + r)^(-1/2) - (1 - r)^(-1/2)) / 2
//! ```
//!
//! and no iterative solver is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue admitted before inversion. Pairs with `|r|` this close
/// to one are treated as if their correlation were `±(1 - eps)`.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-6;

/// A Pearson correlation coefficient, guaranteed to lie in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PairCorrelation(f64);

impl PairCorrelation {
    pub fn new(r: f64) -> Result<Self> {
        if r.is_finite() && (-1.0..=1.0).contains(&r) {
            Ok(Self(r))
        } else {
            Err(Error::InvalidCorrelation(r))
        }
    }

    /// Clamps tiny excursions outside `[-1, 1]` caused by rounding in a
    /// sample correlation estimate.
    pub fn from_estimate(r: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::InvalidCorrelation(r));
        }
        if r.abs() > 1.0 + 1e-12 {
            return Err(Error::InvalidCorrelation(r));
        }
        Ok(Self(r.clamp(-1.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PairCorrelation {
    type Error = Error;

    fn try_from(r: f64) -> Result<Self> {
        Self::new(r)
    }
}

impl From<PairCorrelation> for f64 {
    fn from(r: PairCorrelation) -> f64 {
        r.0
    }
}

/// Eigendecomposition of `[[1, r], [r, 1]]`.
///
/// `values[k]` belongs to column `k` of `vectors` (stored row-major).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen2 {
    pub values: [f64; 2],
    pub vectors: [[f64; 2]; 2],
}

impl Eigen2 {
    /// `U Λ Uᵀ`, row-major.
    pub fn reconstruct(&self) -> [[f64; 2]; 2] {
        let u = &self.vectors;
        let l = &self.values;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..2).map(|k| u[i][k] * l[k] * u[j][k]).sum();
            }
        }
        out
    }
}

/// Closed-form eigendecomposition of the correlation matrix of a pair.
///
/// Eigenvalues are returned as `(1 + r, 1 - r)`, paired with eigenvectors
/// `(1, 1)/√2` and `(1, -1)/√2`. Each eigenvector has a non-negative first
/// component.
pub fn eig_sym_2x2(r: PairCorrelation) -> Eigen2 {
    let r = r.value();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Eigen2 {
        values: [1.0 + r, 1.0 - r],
        vectors: [[h, h], [h, -h]],
    }
}

/// Symmetric 2×2 matrix with equal diagonal entries, `[[diag, off], [off, diag]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteningMatrix2x2 {
    diag: f64,
    off: f64,
}

impl WhiteningMatrix2x2 {
    pub const IDENTITY: Self = Self {
        diag: 1.0,
        off: 0.0,
    };

    pub fn from_entries(diag: f64, off: f64) -> Self {
        Self { diag, off }
    }

    pub fn diag(&self) -> f64 {
        self.diag
    }

    pub fn off_diag(&self) -> f64 {
        self.off
    }

    pub fn to_array(&self) -> [[f64; 2]; 2] {
        [[self.diag, self.off], [self.off, self.diag]]
    }

    /// `W v` for a column vector `v`. Because `W` is symmetric this is also
    /// `v W` for a row vector.
    #[inline]
    pub fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        (self.diag * a + self.off * b, self.off * a + self.diag * b)
    }

    /// `W R W` for the pair correlation matrix `R = [[1, r], [r, 1]]`.
    pub fn sandwich(&self, r: f64) -> [[f64; 2]; 2] {
        let (d, o) = (self.diag, self.off);
        let on = d * d + o * o + 2.0 * r * d * o;
        let across = 2.0 * d * o + r * (d * d + o * o);
        [[on, across], [across, on]]
    }

    /// `α W + (1 - α) I`.
    pub fn regularized(&self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self {
            diag: alpha * self.diag + (1.0 - alpha),
            off: alpha * self.off,
        })
    }
}

/// ZCA-cor block for one pair, together with whether the eigenvalue floor
/// was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZcaCor {
    pub matrix: WhiteningMatrix2x2,
    pub floored: bool,
}

/// `U Λ^(-1/2) Uᵀ` for the pair correlation `r`, with eigenvalues floored at
/// `eps` before inversion.
pub fn zca_cor_matrix(r: PairCorrelation, eps: f64) -> ZcaCor {
    debug_assert!(eps > 0.0);
    let [l1, l2] = eig_sym_2x2(r).values;
    let floored = l1 < eps || l2 < eps;
    let s1 = l1.max(eps).sqrt().recip();
    let s2 = l2.max(eps).sqrt().recip();
    ZcaCor {
        matrix: WhiteningMatrix2x2 {
            diag: 0.5 * (s1 + s2),
            off: 0.5 * (s1 - s2),
        },
        floored,
    }
}

/// Convenience wrapper for [`WhiteningMatrix2x2::regularized`].
pub fn regularized_matrix(w: WhiteningMatrix2x2, alpha: f64) -> Result<WhiteningMatrix2x2> {
    w.regularized(alpha)
}
