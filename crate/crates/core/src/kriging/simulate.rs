//! Conditional simulation of the posterior process on a finite grid, and the
//! grid clean-up that keeps the joint covariance well conditioned.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{GpModel, JitterLadder};
use crate::blackbox::BoxDomain;
use crate::design::sq_dist;
use crate::error::{Error, Result};
use crate::sampling::{derive_seed, rng};

pub const DEFAULT_REPAIR_ATTEMPTS: usize = 10_000;

/// Joint draws of the posterior process on a grid `D'`, together with what is
/// needed to extend each draw to the whole domain by conditioning on
/// `D_n` and `D'` at once.
///
/// The extension of draw `r` is the posterior mean given both the design
/// outputs and the drawn grid values:
/// `m(x) + K_n(x, D') K_n(D', D')^{-1} (y'_r - m(D'))`.
#[derive(Debug, Clone)]
pub struct ConditionalSimulation<'a> {
    model: &'a GpModel,
    grid: Vec<Vec<f64>>,
    grid_mean: Vec<f64>,
    jitter: f64,
    /// `count x T`
    draws: DMatrix<f64>,
    /// `K_n(D', D')^{-1} (y'_r - m(D'))` for every draw, `T x count`.
    weights: DMatrix<f64>,
    /// `L^{-1} R(D_n, D')`, `n x T`.
    grid_white: DMatrix<f64>,
}

/// Draws `count` joint realizations of the posterior process on `grid`.
/// Row `r` uses its own generator seeded from `(seed, r)`.
pub fn conditional_simulate<'a>(
    model: &'a GpModel,
    grid: &[Vec<f64>],
    count: usize,
    seed: u64,
) -> Result<ConditionalSimulation<'a>> {
    conditional_simulate_with(model, grid, count, seed, &JitterLadder::default())
}

pub(crate) fn conditional_simulate_with<'a>(
    model: &'a GpModel,
    grid: &[Vec<f64>],
    count: usize,
    seed: u64,
    ladder: &JitterLadder,
) -> Result<ConditionalSimulation<'a>> {
    if grid.is_empty() || count == 0 {
        return Err(Error::invalid("simulation needs a non-empty grid and count >= 1"));
    }
    if grid.iter().any(|g| g.len() != model.dim()) {
        return Err(Error::invalid("grid dimension differs from the model"));
    }
    let t = grid.len();
    let (grid_mean, _, w) = model.predict_block_whitened(grid);
    let grid_white = w.transpose();
    let sigma2 = model.sigma2();

    let mut draws = DMatrix::from_fn(count, t, |_, j| grid_mean[j]);
    let mut weights = DMatrix::zeros(t, count);
    let mut jitter = 0.0;
    if sigma2 > 0.0 {
        // K_n(D', D') = sigma2 (R' - W W^T)
        let mut cov = &w * w.transpose();
        for i in 0..t {
            for j in 0..t {
                cov[(i, j)] = sigma2 * (model.kernel().correlation(&grid[i], &grid[j]) - cov[(i, j)]);
            }
        }
        let (lg, used) = ladder.factor(&cov, sigma2)?;
        jitter = used;
        let mut z = DMatrix::zeros(t, count);
        for r in 0..count {
            let mut g = rng(derive_seed(seed, r as u64));
            for i in 0..t {
                z[(i, r)] = g.sample::<f64, _>(StandardNormal);
            }
        }
        let lz = &lg * &z;
        for r in 0..count {
            for j in 0..t {
                draws[(r, j)] += lz[(j, r)];
            }
        }
        // (L_g L_g^T)^{-1} L_g z = L_g^{-T} z
        weights = lg
            .tr_solve_lower_triangular(&z)
            .ok_or(Error::SingularCovariance { jitter })?;
    }
    Ok(ConditionalSimulation {
        model,
        grid: grid.to_vec(),
        grid_mean,
        jitter,
        draws,
        weights,
        grid_white,
    })
}

impl<'a> ConditionalSimulation<'a> {
    pub fn count(&self) -> usize {
        self.draws.nrows()
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn grid_mean(&self) -> &[f64] {
        &self.grid_mean
    }

    /// Relative jitter used to factor the grid covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Joint draws on the grid, one row per realization.
    pub fn draws(&self) -> &DMatrix<f64> {
        &self.draws
    }

    /// Values of every extended realization at a block of points (`B x count`).
    pub fn evaluate_block(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let (means, _, w) = self.model.predict_block_whitened(xs);
        let sigma2 = self.model.sigma2();
        let kernel = self.model.kernel();
        // K_n(x, D') = sigma2 (R(x, D') - W G)
        let mut kx = &w * &self.grid_white;
        for (i, x) in xs.iter().enumerate() {
            for (j, g) in self.grid.iter().enumerate() {
                kx[(i, j)] = sigma2 * (kernel.correlation(x, g) - kx[(i, j)]);
            }
        }
        let mut out = &kx * &self.weights;
        for (i, m) in means.iter().enumerate() {
            out.row_mut(i).add_scalar_mut(*m);
        }
        out
    }

    /// The extended realization `r` as a function of `x`.
    pub fn realization(&self, r: usize) -> impl Fn(&[f64]) -> f64 + '_ {
        move |x: &[f64]| self.evaluate_block(&[x.to_vec()])[(0, r)]
    }
}

/// Regular grid of cell centres with `per_axis` points along every axis.
pub fn regular_grid(domain: &BoxDomain, per_axis: usize) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut u = vec![0.0; d];
            for slot in u.iter_mut() {
                *slot = ((idx % per_axis) as f64 + 0.5) / per_axis as f64;
                idx /= per_axis;
            }
            domain.from_unit(&u)
        })
        .collect()
}

/// Moves grid points that crowd the design or each other.
///
/// Points are visited in order; a point closer than `dmin` to a design point
/// or to an already accepted grid point is replaced by uniform draws in the
/// box until it is far enough.
pub fn grid_repair(
    grid: &[Vec<f64>],
    design: &[Vec<f64>],
    domain: &BoxDomain,
    dmin: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(dmin > 0.0) {
        return Err(Error::invalid("dmin must be positive"));
    }
    let d2 = dmin * dmin;
    let mut r = rng(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    let far_enough = |p: &[f64], out: &[Vec<f64>]| {
        design.iter().chain(out.iter()).all(|q| sq_dist(p, q) >= d2)
    };
    for (index, g) in grid.iter().enumerate() {
        if far_enough(g, &out) {
            out.push(g.clone());
            continue;
        }
        let mut placed = false;
        if dmin <= domain.diagonal() {
            for _ in 0..max_attempts {
                let cand = domain.sample_uniform(&mut r);
                if far_enough(&cand, &out) {
                    out.push(cand);
                    placed = true;
                    break;
                }
            }
        }
        if !placed {
            return Err(Error::RepairFailure { index, dmin, attempts: max_attempts });
        }
    }
    Ok(out)
}
