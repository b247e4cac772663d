//! Kernels, Gram matrices and point-set geometry.
//!
//! Lengthscale conventions follow the experimental setup this crate
//! reproduces: the Laplace kernel is `exp(-|x - x'| / d)` and the Gaussian
//! kernel is `exp(-|x - x'|^2 / d)` where `d` is the input dimension.
//! Matérn kernels use a unit lengthscale unless one is supplied.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Default diagonal jitter for square self-Gram matrices.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Supported Matérn smoothness values (closed forms only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn from_value(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(MaternNu::Half),
            v if v == 1.5 => Ok(MaternNu::ThreeHalves),
            v if v == 2.5 => Ok(MaternNu::FiveHalves),
            other => Err(Error::UnsupportedMaternNu(other)),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Laplace,
    Gaussian,
    Matern { nu: MaternNu, lengthscale: f64 },
}

/// A kernel family bound to an input dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dim: usize,
}

impl KernelSpec {
    pub fn laplace(dim: usize) -> Self {
        KernelSpec {
            family: KernelFamily::Laplace,
            dim,
        }
    }

    pub fn gaussian(dim: usize) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            dim,
        }
    }

    /// Matérn kernel with unit lengthscale. Only `nu` in {0.5, 1.5, 2.5}.
    pub fn matern(nu: f64, dim: usize) -> Result<Self> {
        Self::matern_with_lengthscale(nu, 1.0, dim)
    }

    pub fn matern_with_lengthscale(nu: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::invalid(
                "lengthscale",
                format!("{lengthscale} is not positive"),
            ));
        }
        Ok(KernelSpec {
            family: KernelFamily::Matern {
                nu: MaternNu::from_value(nu)?,
                lengthscale,
            },
            dim,
        })
    }

    /// Sobolev order `s = nu + d/2` of the kernel's RKHS. The Laplace kernel
    /// is Matérn-1/2; the Gaussian RKHS has no finite order.
    pub fn sobolev_order(&self) -> Option<f64> {
        let half_d = self.dim as f64 / 2.0;
        match self.family {
            KernelFamily::Laplace => Some(0.5 + half_d),
            KernelFamily::Matern { nu, .. } => Some(nu.value() + half_d),
            KernelFamily::Gaussian => None,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq = squared_distance(x, y);
        self.from_squared_distance(sq)
    }

    #[inline]
    fn from_squared_distance(&self, sq: f64) -> f64 {
        let d = self.dim as f64;
        match self.family {
            KernelFamily::Gaussian => (-sq / d).exp(),
            KernelFamily::Laplace => (-sq.sqrt() / d).exp(),
            KernelFamily::Matern { nu, lengthscale } => {
                let r = sq.sqrt() / lengthscale;
                match nu {
                    MaternNu::Half => (-r).exp(),
                    MaternNu::ThreeHalves => {
                        let a = 3f64.sqrt() * r;
                        (1.0 + a) * (-a).exp()
                    }
                    MaternNu::FiveHalves => {
                        let a = 5f64.sqrt() * r;
                        (1.0 + a + a * a / 3.0) * (-a).exp()
                    }
                }
            }
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// A finite set of points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    parent_indices: Option<Vec<usize>>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                what: "coordinates",
                expected: (coords.len() / dim + 1) * dim,
                got: coords.len(),
            });
        }
        Ok(PointSet {
            dim,
            coords,
            parent_indices: None,
        })
    }

    pub fn empty(dim: usize) -> Self {
        PointSet {
            dim,
            coords: Vec::new(),
            parent_indices: None,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or(Error::EmptyInput("rows"))?;
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Indices into the source set this subset was drawn from, if any.
    pub fn parent_indices(&self) -> Option<&[usize]> {
        self.parent_indices.as_deref()
    }

    /// Rows `indices` of `self`, remembering where they came from.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointSet {
            dim: self.dim,
            coords,
            parent_indices: Some(indices.to_vec()),
        }
    }

    pub fn in_unit_cube(&self) -> bool {
        self.coords.iter().all(|c| (0.0..=1.0).contains(c))
    }
}

/// A square self-Gram matrix together with the jitter added to its diagonal.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub jitter_applied: f64,
}

fn check_pair(spec: &KernelSpec, a: &PointSet, b: &PointSet) -> Result<()> {
    spec.check_dim(a.dim())?;
    spec.check_dim(b.dim())
}

/// Cross-Gram matrix with entry `(i, j) = k(a_i, b_j)`. No jitter.
pub fn cross_gram(spec: &KernelSpec, a: &PointSet, b: &PointSet) -> Result<DMatrix<f64>> {
    check_pair(spec, a, b)?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        spec.eval_unchecked(a.point(i), b.point(j))
    }))
}

/// Self-Gram matrix of `a` with `jitter` added to the diagonal.
pub fn gram(spec: &KernelSpec, a: &PointSet, jitter: f64) -> Result<GramMatrix> {
    spec.check_dim(a.dim())?;
    if !(jitter >= 0.0) {
        return Err(Error::invalid("jitter", "must be nonnegative"));
    }
    let n = a.len();
    let mut entries = DMatrix::zeros(n, n);
    for j in 0..n {
        entries[(j, j)] = 1.0 + jitter;
        for i in 0..j {
            let v = spec.eval_unchecked(a.point(i), a.point(j));
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        jitter_applied: jitter,
    })
}

/// `(1/N^2) c^T K c` for `f = (1/N) sum_i c_i k(., U_i)`.
pub fn rkhs_norm_sq(spec: &KernelSpec, coefficients: &[f64], centers: &PointSet) -> Result<f64> {
    spec.check_dim(centers.dim())?;
    if coefficients.len() != centers.len() {
        return Err(Error::LengthMismatch {
            what: "coefficients",
            expected: centers.len(),
            got: coefficients.len(),
        });
    }
    let n = coefficients.len();
    if n == 0 {
        return Ok(0.0);
    }
    let k = gram(spec, centers, 0.0)?.entries;
    let c = DVector::from_column_slice(coefficients);
    let quad = c.dot(&(&k * &c));
    Ok(quad / (n as f64 * n as f64))
}

/// `max_{x in candidates} min_j |x - selected_j|`, the fill distance of
/// `selected` measured over a finite candidate set.
pub fn fill_distance(candidates: &PointSet, selected: &PointSet) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptyInput("selected"));
    }
    if candidates.dim() != selected.dim() {
        return Err(Error::DimensionMismatch {
            expected: selected.dim(),
            got: candidates.dim(),
        });
    }
    let worst_sq = candidates
        .iter()
        .map(|x| {
            selected
                .iter()
                .map(|s| squared_distance(x, s))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Ok(worst_sq.sqrt())
}

/// Fill distance of `selected` over the unit cube, estimated on `samples`
/// fresh uniform points.
pub fn unit_cube_fill_distance(selected: &PointSet, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = rng::rng_from_seed(seed);
    let dim = selected.dim();
    let coords = (0..samples * dim).map(|_| rng.random::<f64>()).collect();
    fill_distance(&PointSet::new(dim, coords)?, selected)
}

fn check_count(count: usize, available: usize) -> Result<()> {
    if count == 0 || count > available {
        return Err(Error::CountOutOfRange {
            count,
            max: available,
        });
    }
    Ok(())
}

/// Greedy farthest-point selection of `count` candidates.
///
/// The first point is drawn uniformly with `seed`; each later point is the
/// candidate farthest from those already chosen (lowest index on ties).
pub fn farthest_point_sample(candidates: &PointSet, count: usize, seed: u64) -> Result<PointSet> {
    check_count(count, candidates.len())?;
    let mut rng = rng::rng_from_seed(seed);
    let first = rng.random_range(0..candidates.len());
    let mut chosen = Vec::with_capacity(count);
    chosen.push(first);
    let mut nearest_sq: Vec<f64> = candidates
        .iter()
        .map(|x| squared_distance(x, candidates.point(first)))
        .collect();
    while chosen.len() < count {
        let (next, _) =
            nearest_sq
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
        chosen.push(next);
        let p = candidates.point(next);
        for (i, x) in candidates.iter().enumerate() {
            let d = squared_distance(x, p);
            if d < nearest_sq[i] {
                nearest_sq[i] = d;
            }
        }
    }
    Ok(candidates.select(&chosen))
}

/// Uniform subsample of `count` candidates without replacement.
pub fn random_subsample(candidates: &PointSet, count: usize, seed: u64) -> Result<PointSet> {
    check_count(count, candidates.len())?;
    let mut rng = rng::rng_from_seed(seed);
    let picked = index::sample(&mut rng, candidates.len(), count).into_vec();
    Ok(candidates.select(&picked))
}
