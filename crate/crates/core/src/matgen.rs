//! Seeded test matrices with a prescribed 2-norm condition number.
//!
//! Both classes use log-spaced values `κ^{i/(n−1)}`, `i = 0..n`:
//! as eigenvalues of `QΛQᵀ` for [`MatrixClass::Hpd`], and as singular values
//! of `U·SΣ·Vᵀ` for [`MatrixClass::NonsymmetricIndefinite`], where `S` flips
//! the sign of a seeded half of the diagonal. Orthogonal factors are Haar
//! distributed: QR of a Gaussian matrix with `diag(R) > 0`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::DenseOperator;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("dimension must be at least 2, got {0}")]
    DimTooSmall(usize),
    #[error("condition number must be finite and >= 1, got {0}")]
    BadKappa(f64),
    #[error("requested {count} right-hand sides but dimension is {dim}")]
    TooManyRhs { count: usize, dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MatrixClass {
    Hpd,
    NonsymmetricIndefinite,
}

impl fmt::Display for MatrixClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixClass::Hpd => "hpd",
            MatrixClass::NonsymmetricIndefinite => "nonsym",
        })
    }
}

impl FromStr for MatrixClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hpd" | "spd" => Ok(MatrixClass::Hpd),
            "nonsym" | "nonsymmetric" | "nonsymmetric-indefinite" | "non-hpd" => {
                Ok(MatrixClass::NonsymmetricIndefinite)
            }
            other => Err(format!("unknown matrix class `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub dim: usize,
    pub kappa: f64,
    pub klass: MatrixClass,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(dim: usize, kappa: f64, klass: MatrixClass, seed: u64) -> Result<Self, GenError> {
        if dim < 2 {
            return Err(GenError::DimTooSmall(dim));
        }
        if !(kappa.is_finite() && kappa >= 1.0) {
            return Err(GenError::BadKappa(kappa));
        }
        Ok(Self {
            dim,
            kappa,
            klass,
            seed,
        })
    }
}

/// `κ^{i/(n−1)}` for `i = 0..n`, exactly 1 and κ at the ends.
pub fn log_spaced(n: usize, kappa: f64) -> Vec<f64> {
    (0..n)
        .map(|i| match i {
            0 => 1.0,
            i if i + 1 == n => kappa,
            i => kappa.powf(i as f64 / (n - 1) as f64),
        })
        .collect()
}

/// Haar-distributed orthogonal matrix.
pub fn haar_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn gen_matrix(spec: &GenSpec) -> DenseOperator {
    let n = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = log_spaced(n, spec.kappa);
    let m = match spec.klass {
        MatrixClass::Hpd => {
            let q = haar_orthogonal(n, &mut rng);
            let mut qd = q.clone();
            for (j, &l) in values.iter().enumerate() {
                qd.column_mut(j).scale_mut(l);
            }
            let a = qd * q.transpose();
            (&a + a.transpose()) * 0.5
        }
        MatrixClass::NonsymmetricIndefinite => {
            let u = haar_orthogonal(n, &mut rng);
            let v = haar_orthogonal(n, &mut rng);
            let mut signs: Vec<f64> = (0..n).map(|i| if i < n / 2 { -1.0 } else { 1.0 }).collect();
            signs.shuffle(&mut rng);
            let mut ud = u;
            for j in 0..n {
                ud.column_mut(j).scale_mut(signs[j] * values[j]);
            }
            ud * v.transpose()
        }
    };
    DenseOperator::from_nalgebra(&m).expect("generated matrix is square and finite")
}

/// `count` distinct canonical basis vectors in seeded random order.
pub fn gen_rhs_suite(dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, GenError> {
    if count > dim {
        return Err(GenError::TooManyRhs { count, dim });
    }
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx[..count]
        .iter()
        .map(|&i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct CaseSet {
    pub matrix: DenseOperator,
    pub rhs_list: Vec<Vec<f64>>,
}

impl CaseSet {
    pub fn generate(spec: &GenSpec, rhs_count: usize, rhs_seed: u64) -> Result<Self, GenError> {
        Ok(Self {
            matrix: gen_matrix(spec),
            rhs_list: gen_rhs_suite(spec.dim, rhs_count, rhs_seed)?,
        })
    }
}
