//! Tensor-product representations: role bases, binding, unbinding and
//! retrieval interference.
//!
//! A sequence of filler vectors `c_i` bound to role vectors `p_i` is held as
//! the matrix `R = Σ c_i p_iᵀ` (filler_dim × role_dim). Unbinding with a role
//! returns `R p`, which recovers `c_i` exactly when the roles are
//! orthonormal and picks up cross terms `Σ_{j≠i} c_j (p_jᵀ p_i)` otherwise.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleMode {
    /// Gram-Schmidt over seeded Gaussian vectors.
    Orthonormal,
    /// Independent unit-normalized Gaussian vectors.
    Random,
}

impl fmt::Display for RoleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoleMode::Orthonormal => "orthonormal",
            RoleMode::Random => "random",
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn gaussian(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Ordered positional role vectors `p_1..p_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleBasis {
    roles: Vec<Vec<f64>>,
    mode: RoleMode,
}

impl RoleBasis {
    pub fn new(t: usize, role_dim: usize, mode: RoleMode, seed: u64) -> Result<Self> {
        if t == 0 || role_dim == 0 {
            return Err(Error::contract("role basis needs T >= 1 and role_dim >= 1"));
        }
        if mode == RoleMode::Orthonormal && role_dim < t {
            return Err(Error::contract(format!(
                "cannot build {t} orthonormal roles in {role_dim} dimensions"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut roles: Vec<Vec<f64>> = Vec::with_capacity(t);
        while roles.len() < t {
            let mut v = gaussian(role_dim, &mut rng);
            if mode == RoleMode::Orthonormal {
                // Two passes of classical Gram-Schmidt keep the result
                // orthogonal to machine precision.
                for _ in 0..2 {
                    for r in &roles {
                        let proj = dot(&v, r);
                        v.iter_mut().zip(r).for_each(|(x, y)| *x -= proj * y);
                    }
                }
            }
            let n = norm(&v);
            if n < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
            roles.push(v);
        }
        Ok(RoleBasis { roles, mode })
    }

    pub fn from_roles(roles: Vec<Vec<f64>>) -> Result<Self> {
        let dim = roles.first().map_or(0, Vec::len);
        if dim == 0 || roles.iter().any(|r| r.len() != dim) {
            return Err(Error::contract("roles must be non-empty and of equal length"));
        }
        Ok(RoleBasis {
            roles,
            mode: RoleMode::Random,
        })
    }

    pub fn mode(&self) -> RoleMode {
        self.mode
    }

    pub fn is_orthonormal(&self) -> bool {
        self.mode == RoleMode::Orthonormal
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.roles[0].len()
    }

    pub fn role(&self, i: usize) -> &[f64] {
        &self.roles[i]
    }

    pub fn roles(&self) -> &[Vec<f64>] {
        &self.roles
    }

    /// `G[i][j] = p_iᵀ p_j`.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.roles
            .iter()
            .map(|a| self.roles.iter().map(|b| dot(a, b)).collect())
            .collect()
    }
}

/// Running sum `R_t = Σ c_i p_iᵀ` plus an optional injected correction.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRepresentation {
    filler_dim: usize,
    role_dim: usize,
    /// Row-major `filler_dim × role_dim`.
    r: Vec<f64>,
    t: usize,
}

impl BoundRepresentation {
    /// The empty representation `R_0 = 0`.
    pub fn new(filler_dim: usize, role_dim: usize) -> Self {
        BoundRepresentation {
            filler_dim,
            role_dim,
            r: vec![0.0; filler_dim * role_dim],
            t: 0,
        }
    }

    pub fn filler_dim(&self) -> usize {
        self.filler_dim
    }

    pub fn role_dim(&self) -> usize {
        self.role_dim
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn matrix(&self) -> &[f64] {
        &self.r
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.role_dim + j]
    }

    /// `R + c pᵀ`, one more bound step.
    pub fn bind(&self, c: &[f64], p: &[f64]) -> Result<Self> {
        if c.len() != self.filler_dim || p.len() != self.role_dim {
            return Err(Error::contract(format!(
                "bind of filler {} and role {} into {}x{} representation",
                c.len(),
                p.len(),
                self.filler_dim,
                self.role_dim
            )));
        }
        let mut out = self.clone();
        for (i, ci) in c.iter().enumerate() {
            let row = &mut out.r[i * self.role_dim..(i + 1) * self.role_dim];
            row.iter_mut().zip(p).for_each(|(x, pj)| *x += ci * pj);
        }
        out.t += 1;
        Ok(out)
    }

    /// Adds an externally supplied `filler_dim × role_dim` correction
    /// (row-major) without counting it as a bound step.
    pub fn correct(&self, m: &[f64]) -> Result<Self> {
        if m.len() != self.r.len() {
            return Err(Error::contract(format!(
                "correction of {} values for a {}x{} representation",
                m.len(),
                self.filler_dim,
                self.role_dim
            )));
        }
        let mut out = self.clone();
        out.r.iter_mut().zip(m).for_each(|(x, y)| *x += y);
        Ok(out)
    }

    /// Filler estimate `R p`.
    pub fn unbind(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.role_dim {
            return Err(Error::contract(format!(
                "unbind with role of length {} from role_dim {}",
                p.len(),
                self.role_dim
            )));
        }
        Ok(self.r.chunks(self.role_dim).map(|row| dot(row, p)).collect())
    }
}

/// Binds `fillers[i]` to `basis.role(i)` for every position.
pub fn encode(fillers: &[Vec<f64>], basis: &RoleBasis) -> Result<BoundRepresentation> {
    if fillers.len() > basis.len() {
        return Err(Error::contract(format!(
            "{} fillers but only {} roles",
            fillers.len(),
            basis.len()
        )));
    }
    let filler_dim = fillers.first().map_or(0, Vec::len);
    fillers
        .iter()
        .enumerate()
        .try_fold(BoundRepresentation::new(filler_dim, basis.dim()), |r, (i, c)| {
            r.bind(c, basis.role(i))
        })
}

/// Filler dimensionality used by [`interference_report`].
pub const REPORT_FILLER_DIM: usize = 8;

/// One line of the interference report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterferenceRow {
    pub mode: RoleMode,
    pub t: usize,
    pub dim: usize,
    /// Mean retrieval L2 error over all positions and trials.
    pub mean_err: f64,
    pub max_err: f64,
}

/// Retrieval error of `T` Gaussian fillers bound to seeded roles, for each
/// role mode that can be built at this size.
pub fn interference_report(t: usize, role_dim: usize, trials: usize, seed: u64) -> Result<Vec<InterferenceRow>> {
    if trials == 0 {
        return Err(Error::contract("interference report needs at least one trial"));
    }
    let mut rows = Vec::new();
    for mode in [RoleMode::Orthonormal, RoleMode::Random] {
        if mode == RoleMode::Orthonormal && role_dim < t {
            continue;
        }
        let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
        for trial in 0..trials {
            let trial_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(trial as u64);
            let basis = RoleBasis::new(t, role_dim, mode, trial_seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed ^ 0x5eed);
            let fillers: Vec<Vec<f64>> = (0..t).map(|_| gaussian(REPORT_FILLER_DIM, &mut rng)).collect();
            let r = encode(&fillers, &basis)?;
            for (i, c) in fillers.iter().enumerate() {
                let est = r.unbind(basis.role(i))?;
                let err = est.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sum += err;
                max = max.max(err);
                count += 1;
            }
        }
        rows.push(InterferenceRow {
            mode,
            t,
            dim: role_dim,
            mean_err: sum / count as f64,
            max_err: max,
        });
    }
    Ok(rows)
}
