//! Alternating minimization of the coupled objective
//!
//! ```text
//! sum_b ||X~b - D^b A^b - P^b||^2 + ||Y~b - D^{b+1} A^b - P^b||^2
//!       + gamma ||P^b||^2 + lambda ||A^b||_1,     ||D^g(:, j)|| <= 1
//! ```
//!
//! over codes `A`, dictionaries `D` and personalized layers `P`. All algebra
//! happens in the per-group reduced spaces: `X~b = H^b^T X^b` and
//! `Y~b = H^{b+1}^T Y^b`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{compute_average_faces, normalize, DatasetBundle};
use crate::error::{Error, Result};
use crate::model::{max_column_norm, AgingDictionary, AgingModel, HyperParams, TrainingLogRow};
use crate::projection::ProjectionBasis;
use crate::sparse_coding::{solve_coupled_codes, EffectiveDictionary, LassoOptions};

/// Relative ridge added to singular dictionary Gram matrices.
const RIDGE: f64 = 1e-8;

/// Training pairs expressed in reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedData {
    /// `x[b] = H^b^T X^b`, m x n_b
    pub x: Vec<DMatrix<f64>>,
    /// `y[b] = H^{b+1}^T Y^b`, m x n_b
    pub y: Vec<DMatrix<f64>>,
}

impl ReducedData {
    pub fn project(bundle: &DatasetBundle, bases: &[ProjectionBasis]) -> Result<Self> {
        if bases.len() != bundle.dims.groups {
            return Err(Error::dims("projection bases", bundle.dims.groups, bases.len()));
        }
        let mut x = Vec::with_capacity(bundle.bridges.len());
        let mut y = Vec::with_capacity(bundle.bridges.len());
        for (b, pair) in bundle.bridges.iter().enumerate() {
            x.push(bases[b].project_matrix(&pair.x)?);
            y.push(bases[b + 1].project_matrix(&pair.y)?);
        }
        Ok(ReducedData { x, y })
    }

    pub fn bridges(&self) -> usize {
        self.x.len()
    }

    pub fn groups(&self) -> usize {
        self.x.len() + 1
    }

    pub fn m(&self) -> usize {
        self.x.first().map(|x| x.nrows()).unwrap_or(0)
    }

    /// Reduced columns of group `g`: `x[g]` then `y[g - 1]`.
    fn group_columns(&self, g: usize) -> Vec<DVector<f64>> {
        let mut cols = Vec::new();
        if let Some(x) = self.x.get(g) {
            cols.extend(x.column_iter().map(|c| c.into_owned()));
        }
        if g > 0 {
            cols.extend(self.y[g - 1].column_iter().map(|c| c.into_owned()));
        }
        cols
    }
}

/// The three blocks of unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    /// G dictionaries, m x k
    pub dictionaries: Vec<DMatrix<f64>>,
    /// G - 1 code matrices, k x n_b
    pub codes: Vec<DMatrix<f64>>,
    /// G - 1 personalized layers, m x n_b
    pub layers: Vec<DMatrix<f64>>,
}

impl TrainingState {
    pub fn check_shapes(&self, data: &ReducedData) -> Result<()> {
        let (g, m) = (data.groups(), data.m());
        if self.dictionaries.len() != g {
            return Err(Error::dims("dictionaries", g, self.dictionaries.len()));
        }
        if self.codes.len() != g - 1 || self.layers.len() != g - 1 {
            return Err(Error::dims("bridges", g - 1, self.codes.len().min(self.layers.len())));
        }
        let k = self.dictionaries[0].ncols();
        for d in &self.dictionaries {
            if d.shape() != (m, k) {
                return Err(Error::dims("dictionary size", m * k, d.len()));
            }
        }
        for b in 0..g - 1 {
            let n = data.x[b].ncols();
            if data.y[b].shape() != (m, n) || data.x[b].nrows() != m {
                return Err(Error::dims("reduced pair size", m * n, data.y[b].len()));
            }
            if self.codes[b].shape() != (k, n) {
                return Err(Error::dims("code matrix size", k * n, self.codes[b].len()));
            }
            if self.layers[b].shape() != (m, n) {
                return Err(Error::dims("personalized layer size", m * n, self.layers[b].len()));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.dictionaries.first().map(|d| d.ncols()).unwrap_or(0)
    }

    pub fn max_column_norm(&self) -> f64 {
        self.dictionaries.iter().map(max_column_norm).fold(0.0, f64::max)
    }

    /// Personalized layers of bridge `b`, with the f-dimensional view through
    /// the younger group's basis.
    pub fn personalized_batch(&self, b: usize, basis: &ProjectionBasis) -> Result<PersonalizedLayerBatch> {
        let reduced = self
            .layers
            .get(b)
            .ok_or_else(|| Error::GroupOutOfRange {
                group: b,
                valid: format!("0..{}", self.layers.len()),
            })?
            .clone();
        let lifted = basis.lift_matrix(&reduced)?;
        Ok(PersonalizedLayerBatch {
            bridge: b,
            reduced,
            lifted,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedLayerBatch {
    pub bridge: usize,
    /// m x n
    pub reduced: DMatrix<f64>,
    /// f x n, for inspection
    pub lifted: DMatrix<f64>,
}

/// Indicator weights `(eps1, eps2)` for the dictionary of group `c`:
/// `eps1` switches on the bridge where `c` is the older side, `eps2` the
/// bridge where it is the younger side.
pub fn dictionary_indicators(c: usize, groups: usize) -> (f64, f64) {
    let eps1 = if c == 0 { 0.0 } else { 1.0 };
    let eps2 = if c + 1 == groups { 0.0 } else { 1.0 };
    (eps1, eps2)
}

/// Coupled objective value.
pub fn objective(state: &TrainingState, data: &ReducedData, lambda: f64, gamma: f64) -> Result<f64> {
    state.check_shapes(data)?;
    let mut total = 0.0;
    for b in 0..data.bridges() {
        let a = &state.codes[b];
        let p = &state.layers[b];
        let rx = &data.x[b] - &state.dictionaries[b] * a - p;
        let ry = &data.y[b] - &state.dictionaries[b + 1] * a - p;
        total += rx.norm_squared()
            + ry.norm_squared()
            + gamma * p.norm_squared()
            + lambda * a.iter().map(|v| v.abs()).sum::<f64>();
    }
    Ok(total)
}

/// Dictionary columns are `k` distinct reduced training samples of the group,
/// unit-normalized, chosen by a seeded shuffle; groups with fewer usable
/// samples are padded with seeded unit-norm Gaussian columns. Codes and
/// layers start at zero.
pub fn init_state(data: &ReducedData, k: usize, rng_seed: u64) -> Result<TrainingState> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let m = data.m();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut dictionaries = Vec::with_capacity(data.groups());
    for g in 0..data.groups() {
        let cols = data.group_columns(g);
        let mut order: Vec<usize> = (0..cols.len()).collect();
        order.shuffle(&mut rng);
        let mut d = DMatrix::zeros(m, k);
        let mut filled = 0;
        for &i in &order {
            if filled == k {
                break;
            }
            let norm = cols[i].norm();
            if norm > 0.0 {
                d.set_column(filled, &(&cols[i] / norm));
                filled += 1;
            }
        }
        while filled < k {
            let v = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            let norm: f64 = v.norm();
            if norm > 0.0 {
                d.set_column(filled, &(v / norm));
                filled += 1;
            }
        }
        dictionaries.push(d);
    }
    Ok(TrainingState {
        dictionaries,
        codes: data.x.iter().map(|x| DMatrix::zeros(k, x.ncols())).collect(),
        layers: data.x.iter().map(|x| DMatrix::zeros(m, x.ncols())).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeUpdate {
    pub converged: bool,
    pub max_kkt_residual: f64,
}

/// Replaces every `A^b` by the stacked Lasso solution, warm-started from the
/// current codes.
pub fn update_codes(
    state: &mut TrainingState,
    data: &ReducedData,
    lambda: f64,
    options: LassoOptions,
) -> Result<CodeUpdate> {
    state.check_shapes(data)?;
    let mut report = CodeUpdate {
        converged: true,
        max_kkt_residual: 0.0,
    };
    for b in 0..data.bridges() {
        let u = &data.x[b] - &state.layers[b];
        let v = &data.y[b] - &state.layers[b];
        let young = EffectiveDictionary::new(b, state.dictionaries[b].clone())?;
        let old = EffectiveDictionary::new(b + 1, state.dictionaries[b + 1].clone())?;
        let batch = solve_coupled_codes(b, &young, &old, &u, &v, lambda, options, Some(&state.codes[b]))?;
        report.converged &= batch.converged;
        report.max_kkt_residual = report.max_kkt_residual.max(batch.max_kkt_residual);
        state.codes[b] = batch.a;
    }
    Ok(report)
}

/// `(Z + R) / (2 + gamma)`, the minimizer of
/// `||Z - P||^2 + ||R - P||^2 + gamma ||P||^2`.
pub fn personalized_closed_form(z: &DMatrix<f64>, r: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    (z + r) / (2.0 + gamma)
}

pub fn update_personalized(state: &mut TrainingState, data: &ReducedData, gamma: f64) -> Result<()> {
    state.check_shapes(data)?;
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
    }
    for b in 0..data.bridges() {
        let a = &state.codes[b];
        let z = &data.x[b] - &state.dictionaries[b] * a;
        let r = &data.y[b] - &state.dictionaries[b + 1] * a;
        state.layers[b] = personalized_closed_form(&z, &r, gamma);
    }
    Ok(())
}

/// Left- and right-hand sides of `D^c M = B` for group `c`.
pub fn dictionary_normal_equations(
    c: usize,
    state: &TrainingState,
    data: &ReducedData,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    state.check_shapes(data)?;
    let groups = data.groups();
    if c >= groups {
        return Err(Error::GroupOutOfRange {
            group: c,
            valid: format!("0..{groups}"),
        });
    }
    let (eps1, eps2) = dictionary_indicators(c, groups);
    let (m, k) = (data.m(), state.k());
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DMatrix::zeros(m, k);
    if eps1 != 0.0 {
        let a = &state.codes[c - 1];
        let v = &data.y[c - 1] - &state.layers[c - 1];
        gram += eps1 * a * a.transpose();
        rhs += eps1 * v * a.transpose();
    }
    if eps2 != 0.0 {
        let a = &state.codes[c];
        let u = &data.x[c] - &state.layers[c];
        gram += eps2 * a * a.transpose();
        rhs += eps2 * u * a.transpose();
    }
    Ok((gram, rhs))
}

/// Closed-form dictionary for group `c` before the unit-ball projection, with
/// the condition number of the damped Gram matrix. `None` when every code
/// touching the group is zero (any dictionary is then optimal).
pub fn solve_dictionary(
    c: usize,
    state: &TrainingState,
    data: &ReducedData,
) -> Result<Option<(DMatrix<f64>, f64)>> {
    let (gram, rhs) = dictionary_normal_equations(c, state, data)?;
    let k = gram.nrows();
    let trace = gram.trace();
    if trace.is_nan() || trace <= 0.0 {
        return Ok(None);
    }
    let mut damped = gram;
    let ridge = RIDGE * trace / k as f64;
    for i in 0..k {
        damped[(i, i)] += ridge;
    }
    let eig = SymmetricEigen::new(damped.clone());
    let hi = eig.eigenvalues.max();
    let lo = eig.eigenvalues.min();
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    // D M = B  <=>  M D^T = B^T
    let chol = damped.cholesky().ok_or_else(|| {
        Error::InvalidParameter(format!("dictionary Gram matrix of group {c} is not positive definite"))
    })?;
    let d = chol.solve(&rhs.transpose()).transpose();
    Ok(Some((d, condition)))
}

/// Rescales columns with norm above one onto the unit sphere; shorter
/// columns are left alone.
pub fn project_columns_to_unit_ball(d: &mut DMatrix<f64>) {
    for mut col in d.column_iter_mut() {
        let norm = col.norm();
        if norm > 1.0 {
            col /= norm;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryUpdate {
    pub max_condition: f64,
    pub reseeded_atoms: usize,
}

/// Solves each group's dictionary in closed form, projects its columns onto
/// the unit ball, then re-seeds atoms no code uses with the worst
/// reconstructed reduced sample of the group.
pub fn update_dictionaries(state: &mut TrainingState, data: &ReducedData) -> Result<DictionaryUpdate> {
    state.check_shapes(data)?;
    let mut report = DictionaryUpdate {
        max_condition: 0.0,
        reseeded_atoms: 0,
    };
    for c in 0..data.groups() {
        if let Some((mut d, condition)) = solve_dictionary(c, state, data)? {
            project_columns_to_unit_ball(&mut d);
            state.dictionaries[c] = d;
            report.max_condition = report.max_condition.max(condition);
        }
        report.reseeded_atoms += reseed_dead_atoms(c, state, data);
    }
    Ok(report)
}

fn reseed_dead_atoms(c: usize, state: &mut TrainingState, data: &ReducedData) -> usize {
    let k = state.k();
    let touching: Vec<usize> = [c.checked_sub(1), (c < data.bridges()).then_some(c)]
        .into_iter()
        .flatten()
        .collect();
    let dead: Vec<usize> = (0..k)
        .filter(|&j| touching.iter().all(|&b| state.codes[b].row(j).iter().all(|v| *v == 0.0)))
        .collect();
    if dead.is_empty() {
        return 0;
    }
    // (residual norm, sample) for every reduced sample of the group
    let d = &state.dictionaries[c];
    let mut candidates: Vec<(f64, DVector<f64>)> = Vec::new();
    if c < data.bridges() {
        let resid = &data.x[c] - d * &state.codes[c] - &state.layers[c];
        for (i, col) in data.x[c].column_iter().enumerate() {
            candidates.push((resid.column(i).norm(), col.into_owned()));
        }
    }
    if c > 0 {
        let resid = &data.y[c - 1] - d * &state.codes[c - 1] - &state.layers[c - 1];
        for (i, col) in data.y[c - 1].column_iter().enumerate() {
            candidates.push((resid.column(i).norm(), col.into_owned()));
        }
    }
    // stable sort keeps the order deterministic on ties
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut usable = candidates.into_iter().filter(|(_, s)| s.norm() > 0.0);
    let mut count = 0;
    for j in dead {
        let Some((_, sample)) = usable.next() else { break };
        let norm = sample.norm();
        state.dictionaries[c].set_column(j, &(sample / norm));
        count += 1;
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateTimings {
    pub codes: Duration,
    pub dictionaries: Duration,
    pub personalized: Duration,
}

/// Objective after each block update of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageObjectives {
    pub after_codes: f64,
    pub after_dictionaries: f64,
    pub after_personalized: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: AgingModel,
    /// Final codes, dictionaries and layers.
    pub state: TrainingState,
    /// Objective at the initial state.
    pub initial_objective: f64,
    /// Whether the relative objective change fell below `rel_tol`.
    pub converged: bool,
    pub timings: Vec<UpdateTimings>,
    pub stage_objectives: Vec<StageObjectives>,
    /// Total atoms re-seeded over the whole run.
    pub reseeded_atoms: usize,
}

/// Fits projections, then alternates code, dictionary and personalized-layer
/// updates until the relative objective change drops below `rel_tol` or
/// `max_outer_iter` iterations have run.
pub fn train(bundle: &DatasetBundle, hyper: &HyperParams) -> Result<TrainOutput> {
    hyper.validate()?;
    let bundle = normalize(bundle)?;
    let m = hyper.resolve_m(&bundle.dims)?;
    let resolved = HyperParams {
        m: Some(m),
        lasso_max_sweeps: Some(hyper.lasso_sweeps()),
        ..hyper.clone()
    };

    let bases = (0..bundle.dims.groups)
        .map(|g| ProjectionBasis::fit_completed(g, &bundle.group_samples(g)?, m, hyper.center))
        .collect::<Result<Vec<_>>>()?;
    let averages = compute_average_faces(&bundle)?;
    let data = ReducedData::project(&bundle, &bases)?;
    let mut state = init_state(&data, hyper.k, hyper.rng_seed)?;

    let options = LassoOptions {
        tol: hyper.lasso_tol,
        max_sweeps: resolved.lasso_sweeps(),
    };
    let initial_objective = objective(&state, &data, hyper.lambda, hyper.gamma)?;
    let mut previous = initial_objective;
    let mut log = Vec::new();
    let mut timings = Vec::new();
    let mut stage_objectives = Vec::new();
    let mut converged = false;
    let mut reseeded_atoms = 0;

    for iteration in 1..=hyper.max_outer_iter {
        let t0 = Instant::now();
        update_codes(&mut state, &data, hyper.lambda, options)?;
        let t1 = Instant::now();
        let after_codes = objective(&state, &data, hyper.lambda, hyper.gamma)?;
        let t1b = Instant::now();
        let dict = update_dictionaries(&mut state, &data)?;
        let t2 = Instant::now();
        let after_dictionaries = objective(&state, &data, hyper.lambda, hyper.gamma)?;
        let t2b = Instant::now();
        update_personalized(&mut state, &data, hyper.gamma)?;
        let t3 = Instant::now();

        reseeded_atoms += dict.reseeded_atoms;
        let current = objective(&state, &data, hyper.lambda, hyper.gamma)?;
        stage_objectives.push(StageObjectives {
            after_codes,
            after_dictionaries,
            after_personalized: current,
        });
        if !current.is_finite() {
            return Err(Error::NonFinite {
                context: format!("objective at iteration {iteration}"),
            });
        }
        log.push(TrainingLogRow {
            iteration: iteration as u64,
            objective: current,
            max_column_norm: state.max_column_norm(),
            condition: dict.max_condition,
        });
        timings.push(UpdateTimings {
            codes: t1 - t0,
            dictionaries: t2 - t1b,
            personalized: t3 - t2b,
        });
        let change = (previous - current).abs();
        let scale = previous.abs().max(f64::MIN_POSITIVE);
        previous = current;
        if change < hyper.rel_tol * scale || change == 0.0 {
            converged = true;
            break;
        }
    }

    let model = AgingModel {
        dims: bundle.dims.clone(),
        hyper: resolved,
        bases,
        dictionaries: state
            .dictionaries
            .iter()
            .enumerate()
            .map(|(group, d)| AgingDictionary { group, d: d.clone() })
            .collect(),
        averages,
        training_log: log,
    };
    Ok(TrainOutput {
        model,
        state,
        initial_objective,
        converged,
        timings,
        stage_objectives,
        reseeded_atoms,
    })
}
