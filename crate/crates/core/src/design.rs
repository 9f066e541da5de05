//! Space-filling designs: Latin hypercubes, maximin annealing and a
//! one-point-at-a-time augmentation rule.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::blackbox::BoxDomain;
use crate::error::{Error, Result};
use crate::kriging::GpModel;
use crate::numeric::normal_cdf;
use crate::sampling::rng;

/// Ordered input points, optionally with their evaluated outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
    pub outputs: Option<Vec<f64>>,
}

impl Design {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = points.first() {
            let d = first.len();
            if d == 0 || points.iter().any(|p| p.len() != d) {
                return Err(Error::invalid("design points must share a positive dimension"));
            }
        }
        Ok(Design { points, outputs: None })
    }

    pub fn with_outputs(points: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if points.len() != outputs.len() {
            return Err(Error::invalid("outputs must align with points"));
        }
        let mut d = Design::new(points)?;
        d.outputs = Some(outputs);
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn min_distance(&self) -> f64 {
        min_pairwise_distance(&self.points)
    }

    pub fn has_distinct_points(&self) -> bool {
        self.len() < 2 || self.min_distance() > 0.0
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        if self.outputs.is_some() {
            header.push("y".into());
        }
        w.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            if let Some(y) = &self.outputs {
                row.push(format!("{:e}", y[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a design written by [`Design::write_csv`]; a final column named
    /// `y` is taken as outputs.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let has_y = headers.iter().next_back().is_some_and(|h| h.trim() == "y");
        let mut points = Vec::new();
        let mut outputs = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if has_y {
                outputs.push(vals.pop().ok_or_else(|| Error::Parse("empty row".into()))?);
            }
            points.push(vals);
        }
        if has_y {
            Design::with_outputs(points, outputs)
        } else {
            Design::new(points)
        }
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Design::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(sq_dist(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

/// Random Latin hypercube of `n` points in `[0, 1)^d`: in every column the
/// `n` coordinates fall in the `n` strata `[k/n, (k+1)/n)`, one per stratum.
pub fn lhs(n: usize, d: usize, seed: u64) -> Result<Design> {
    if n < 2 || d == 0 {
        return Err(Error::invalid("a Latin hypercube needs n >= 2 and d >= 1"));
    }
    let mut r = rng(seed);
    let mut points = vec![vec![0.0; d]; n];
    let nf = n as f64;
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut r);
        for (i, &k) in strata.iter().enumerate() {
            // jitter stays strictly inside the stratum
            let u: f64 = r.random();
            points[i][j] = ((k as f64 + u) / nf).min((k as f64 + 1.0) / nf - f64::EPSILON);
        }
    }
    Design::new(points)
}

/// Stratum index of each coordinate in column `j`, for Latin-property checks.
pub fn strata(design: &Design, j: usize) -> Vec<usize> {
    let n = design.len() as f64;
    design.points.iter().map(|p| (p[j] * n).floor() as usize).collect()
}

pub fn is_latin(design: &Design) -> bool {
    let n = design.len();
    (0..design.dim()).all(|j| {
        let mut s = strata(design, j);
        s.sort_unstable();
        s.into_iter().eq(0..n)
    })
}

/// Geometric cooling schedule for [`maximin_anneal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub initial_temperature: f64,
    /// Multiplicative factor applied after every proposal.
    pub cooling: f64,
    /// Exponent of the Morris–Mitchell energy guiding the search.
    pub exponent: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { initial_temperature: 0.05, cooling: 0.9995, exponent: 20.0 }
    }
}

/// Improves the minimum pairwise distance of a Latin hypercube by simulated
/// annealing on within-column swaps, which keep the Latin property.
///
/// The search is guided by the smooth energy `sum d_ij^-p` (acceptance on the
/// log scale); the returned design is the best one seen by minimum distance,
/// so it is never worse than the input.
pub fn maximin_anneal(
    design: &Design,
    iterations: usize,
    schedule: AnnealSchedule,
    seed: u64,
) -> Result<Design> {
    let n = design.len();
    if iterations == 0 || n < 3 {
        return Ok(design.clone());
    }
    let d = design.dim();
    let p = schedule.exponent;
    let mut r = rng(seed);
    let mut pts = design.points.clone();
    let mut d2 = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in i + 1..n {
            let v = sq_dist(&pts[i], &pts[k]);
            d2[i][k] = v;
            d2[k][i] = v;
        }
    }
    // energy terms use squared distances: d^-p = (d^2)^(-p/2)
    let term = |v: f64| v.max(1e-300).powf(-0.5 * p);
    let total_energy = |d2: &Vec<Vec<f64>>| {
        let mut s = 0.0;
        for i in 0..n {
            for k in i + 1..n {
                s += term(d2[i][k]);
            }
        }
        s
    };
    let min_d2 = |d2: &Vec<Vec<f64>>| {
        let mut m = f64::INFINITY;
        for i in 0..n {
            for k in i + 1..n {
                m = m.min(d2[i][k]);
            }
        }
        m
    };
    let mut energy = total_energy(&d2);
    let mut best_min = min_d2(&d2);
    let mut best = pts.clone();
    let mut temp = schedule.initial_temperature;
    let mut row_a = vec![0.0; n];
    let mut row_b = vec![0.0; n];

    for it in 0..iterations {
        let j = r.random_range(0..d);
        let a = r.random_range(0..n);
        let mut b = r.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let (va, vb) = (pts[a][j], pts[b][j]);
        let mut delta = 0.0;
        for k in 0..n {
            if k == a || k == b {
                row_a[k] = d2[a][k];
                row_b[k] = d2[b][k];
                continue;
            }
            let xk = pts[k][j];
            row_a[k] = d2[a][k] - (va - xk).powi(2) + (vb - xk).powi(2);
            row_b[k] = d2[b][k] - (vb - xk).powi(2) + (va - xk).powi(2);
            delta += term(row_a[k]) + term(row_b[k]) - term(d2[a][k]) - term(d2[b][k]);
        }
        let new_energy = energy + delta;
        let log_ratio = (new_energy.max(1e-300) / energy).ln() / p;
        let accept = log_ratio <= 0.0 || r.random::<f64>() < (-log_ratio / temp).exp();
        if accept {
            pts[a][j] = vb;
            pts[b][j] = va;
            for k in 0..n {
                if k != a && k != b {
                    d2[a][k] = row_a[k];
                    d2[k][a] = row_a[k];
                    d2[b][k] = row_b[k];
                    d2[k][b] = row_b[k];
                }
            }
            energy = new_energy;
            if it % 1024 == 0 {
                energy = total_energy(&d2);
            }
            let m = min_d2(&d2);
            if m > best_min {
                best_min = m;
                best.clone_from(&pts);
            }
        }
        temp *= schedule.cooling;
    }
    let mut out = design.clone();
    out.points = best;
    Ok(out)
}

/// LHS followed by maximin annealing, in the unit cube.
pub fn lhs_maximin(n: usize, d: usize, iterations: usize, seed: u64) -> Result<Design> {
    let base = lhs(n, d, crate::sampling::derive_seed(seed, 0))?;
    maximin_anneal(&base, iterations, AnnealSchedule::default(), crate::sampling::derive_seed(seed, 1))
}

/// Affine map of unit-cube points onto `domain`.
pub fn scale_to_box(design: &Design, domain: &BoxDomain) -> Result<Design> {
    if design.dim() != domain.dim() {
        return Err(Error::invalid("design and box dimensions differ"));
    }
    Ok(Design {
        points: design.points.iter().map(|p| domain.from_unit(p)).collect(),
        outputs: design.outputs.clone(),
    })
}

pub fn unscale_from_box(design: &Design, domain: &BoxDomain) -> Result<Design> {
    if design.dim() != domain.dim() {
        return Err(Error::invalid("design and box dimensions differ"));
    }
    Ok(Design {
        points: design.points.iter().map(|p| domain.to_unit(p)).collect(),
        outputs: design.outputs.clone(),
    })
}

/// Result of one augmentation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub index: usize,
    pub point: Vec<f64>,
    pub score: f64,
}

/// Picks the candidate maximizing the misclassification proxy
/// `Phi(-|rho - m(x)| / s(x))`; ties go to the lowest index.
///
/// This is a lightweight stand-in for targeted IMSE / SUR criteria, not an
/// implementation of them.
pub fn sequential_augment(model: &GpModel, rho: f64, candidates: &[Vec<f64>]) -> Result<Augmentation> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates"));
    }
    let preds = model.predict_many(candidates);
    let mut best: Option<(usize, f64)> = None;
    let mut any_positive = false;
    for (i, (m, v)) in preds.iter().enumerate() {
        let s = v.sqrt();
        let score = if s > 0.0 {
            any_positive = true;
            normal_cdf(-(rho - m).abs() / s)
        } else {
            0.0
        };
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    if !any_positive {
        return Err(Error::DegenerateModel);
    }
    let (index, score) = best.expect("non-empty");
    Ok(Augmentation { index, point: candidates[index].clone(), score })
}
