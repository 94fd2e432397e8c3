//! Synthetic corpora with a known generating model.
//!
//! Each group `g` gets an orthonormal basis `H^g` (f x m) whose first column
//! is the constant vector, and a dictionary `D^g` (m x k) whose first atom is
//! the unit vector `e_0`, so code entry 0 sets overall brightness. The
//! remaining atoms drift smoothly from group to group. Subjects of bridge `b`
//! draw a sparse code `a` and a small layer `p`, and their faces are
//!
//! ```text
//! x = H^b (D^b a + p) + noise,    y = H^{b+1} (D^{b+1} a + p) + noise
//! ```
//!
//! clamped to [0,1].

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{compute_average_faces, DatasetBundle};
use crate::error::{Error, Result};
use crate::model::{AgingDictionary, AgingModel, HyperParams};
use crate::projection::ProjectionBasis;

/// Mean pixel level of a planted face.
const BRIGHTNESS: f64 = 0.5;
/// Spread of the brightness across subjects, as a fraction of `BRIGHTNESS`.
const BRIGHTNESS_SPREAD: f64 = 0.05;
/// Size of the random step between the atoms of neighbouring groups.
const ATOM_DRIFT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub f: usize,
    pub groups: usize,
    pub k: usize,
    pub m: usize,
    /// Pairs per bridge.
    pub n: usize,
    /// Active atoms per subject besides the brightness atom.
    pub sparsity: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Pixel RMS contributed by one active atom.
    pub code_scale: f64,
    /// Pixel RMS of the personalized layer.
    pub layer_scale: f64,
    pub seed: u64,
    /// Weights recorded in the ground-truth model.
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            f: 1024,
            groups: 5,
            k: 20,
            m: 40,
            n: 30,
            sparsity: 3,
            noise: 0.01,
            code_scale: 0.05,
            layer_scale: 0.02,
            seed: 0,
            lambda: 0.01,
            gamma: 0.1,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.groups < 2 {
            return bad(format!("need at least 2 groups, got {}", self.groups));
        }
        if self.f == 0 || self.n == 0 || self.k == 0 {
            return bad("f, n and k must be positive".into());
        }
        if self.m == 0 || self.m > self.f {
            return bad(format!("m = {} must lie in 1..={}", self.m, self.f));
        }
        if self.sparsity >= self.k {
            return bad(format!("sparsity {} must be below k = {}", self.sparsity, self.k));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("code_scale", self.code_scale),
            ("layer_scale", self.layer_scale),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub config: PlantedConfig,
    pub bundle: DatasetBundle,
    /// Generating bases and dictionaries, with averages taken from `bundle`
    /// and an empty training log.
    pub truth: AgingModel,
    /// Planted codes per bridge, k x n.
    pub codes: Vec<DMatrix<f64>>,
    /// Planted layers per bridge, m x n.
    pub layers: Vec<DMatrix<f64>>,
}

/// A fresh subject for synthesis scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedProbe {
    pub start_group: usize,
    pub code: DVector<f64>,
    /// Reduced layer; zero unless requested.
    pub layer: DVector<f64>,
    /// Face in `start_group`.
    pub input: DVector<f64>,
    /// Faces for groups `start_group + 1 ..`, unclamped.
    pub future: Vec<DVector<f64>>,
}

pub fn generate(config: &PlantedConfig) -> Result<PlantedDataset> {
    config.validate()?;
    let PlantedConfig { f, groups, k, m, n, .. } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let bases: Vec<DMatrix<f64>> = (0..groups).map(|_| random_basis(f, m, &mut rng)).collect();
    let mut dictionaries: Vec<DMatrix<f64>> = Vec::with_capacity(groups);
    let mut d = gaussian(m, k, &mut rng);
    for _ in 0..groups {
        d.column_mut(0).fill(0.0);
        d[(0, 0)] = 1.0;
        normalize_columns(&mut d);
        dictionaries.push(d.clone());
        d += gaussian(m, k, &mut rng) * (ATOM_DRIFT / (m as f64).sqrt());
    }

    let mut pairs = Vec::with_capacity(groups - 1);
    let mut codes = Vec::with_capacity(groups - 1);
    let mut layers = Vec::with_capacity(groups - 1);
    for b in 0..groups - 1 {
        let a = DMatrix::from_columns(&(0..n).map(|_| draw_code(config, &mut rng)).collect::<Vec<_>>());
        let p = gaussian(m, n, &mut rng) * layer_std(config);
        let mut x = &bases[b] * (&dictionaries[b] * &a + &p);
        let mut y = &bases[b + 1] * (&dictionaries[b + 1] * &a + &p);
        for v in x.iter_mut().chain(y.iter_mut()) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + config.noise * e).clamp(0.0, 1.0);
        }
        pairs.push((x, y));
        codes.push(a);
        layers.push(p);
    }

    let bundle = DatasetBundle::from_pairs(pairs, 1.0, None)?;
    let averages = compute_average_faces(&bundle)?;
    let hyper = HyperParams {
        lambda: config.lambda,
        gamma: config.gamma,
        k,
        m: Some(m),
        lasso_max_sweeps: Some(10 * k),
        ..HyperParams::default()
    };
    let truth = AgingModel {
        dims: bundle.dims.clone(),
        hyper,
        bases: bases
            .into_iter()
            .enumerate()
            .map(|(group, h)| ProjectionBasis { group, h })
            .collect(),
        dictionaries: dictionaries
            .into_iter()
            .enumerate()
            .map(|(group, d)| AgingDictionary { group, d })
            .collect(),
        averages,
        training_log: Vec::new(),
    };
    truth.validate()?;
    Ok(PlantedDataset {
        config: config.clone(),
        bundle,
        truth,
        codes,
        layers,
    })
}

impl PlantedDataset {
    /// Draws a new subject from the planted population and renders its faces
    /// through the generating model, without noise.
    pub fn probe(&self, start_group: usize, seed: u64, with_layer: bool) -> Result<PlantedProbe> {
        let groups = self.truth.groups();
        if start_group + 1 >= groups {
            return Err(Error::GroupOutOfRange {
                group: start_group,
                valid: format!("0..{}", groups - 1),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = draw_code(&self.config, &mut rng);
        let layer = if with_layer {
            gaussian(self.config.m, 1, &mut rng).column(0) * layer_std(&self.config)
        } else {
            DVector::zeros(self.config.m)
        };
        let render = |g: usize| &self.truth.bases[g].h * (&self.truth.dictionaries[g].d * &code + &layer);
        Ok(PlantedProbe {
            start_group,
            input: render(start_group),
            future: (start_group + 1..groups).map(render).collect(),
            code,
            layer,
        })
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn normalize_columns(d: &mut DMatrix<f64>) {
    for mut col in d.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

/// Orthonormal f x m basis whose first column is `1 / sqrt(f)`.
fn random_basis(f: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut seed = gaussian(f, m, rng);
    seed.column_mut(0).fill(1.0);
    let mut q = seed.qr().q();
    for mut col in q.column_iter_mut() {
        let idx = col.iamax();
        if col[idx] < 0.0 {
            col.neg_mut();
        }
    }
    let c = 1.0 / (f as f64).sqrt();
    q.column_mut(0).fill(c);
    q
}

fn layer_std(config: &PlantedConfig) -> f64 {
    config.layer_scale * (config.f as f64 / config.m as f64).sqrt()
}

fn draw_code(config: &PlantedConfig, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let root_f = (config.f as f64).sqrt();
    let mut a = DVector::zeros(config.k);
    let spread: f64 = StandardNormal.sample(rng);
    a[0] = BRIGHTNESS * root_f * (1.0 + BRIGHTNESS_SPREAD * spread);
    for j in sample(rng, config.k - 1, config.sparsity) {
        let magnitude = rng.random_range(0.5..1.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        a[j + 1] = sign * magnitude * config.code_scale * root_f;
    }
    a
}
