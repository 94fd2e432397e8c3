//! Paired training corpus organised by age group.
//!
//! Groups and bridges are indexed from zero in the API: bridge `b` pairs
//! samples of group `b` (columns of `x`) with the same subjects in group
//! `b + 1` (columns of `y`).

pub mod manifest;
pub mod sample;

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
pub use manifest::Manifest;
pub use sample::{read_sample, write_sample, RawSample, SampleFormat};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDims {
    /// Sample dimensionality (pixel count).
    pub f: usize,
    /// Number of age groups.
    pub groups: usize,
    pub n_per_bridge: Vec<usize>,
    /// Ordered young to old.
    pub group_labels: Vec<String>,
}

impl DatasetDims {
    pub fn new(f: usize, n_per_bridge: Vec<usize>, group_labels: Option<Vec<String>>) -> Result<Self> {
        let groups = n_per_bridge.len() + 1;
        let group_labels =
            group_labels.unwrap_or_else(|| (1..=groups).map(|g| format!("g{g}")).collect());
        let dims = DatasetDims {
            f,
            groups,
            n_per_bridge,
            group_labels,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f == 0 {
            return Err(Error::InvalidParameter("f must be at least 1".into()));
        }
        if self.groups < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 groups, got {}",
                self.groups
            )));
        }
        if self.n_per_bridge.len() != self.groups - 1 {
            return Err(Error::dims("bridge count", self.groups - 1, self.n_per_bridge.len()));
        }
        if let Some(b) = self.n_per_bridge.iter().position(|&n| n == 0) {
            return Err(Error::EmptyBridge { bridge: b + 1 });
        }
        if self.group_labels.len() != self.groups {
            return Err(Error::dims("group labels", self.groups, self.group_labels.len()));
        }
        Ok(())
    }

    pub fn bridges(&self) -> usize {
        self.groups - 1
    }

    /// Number of training columns observed in group `g`.
    pub fn group_size(&self, g: usize) -> usize {
        let from_x = self.n_per_bridge.get(g).copied().unwrap_or(0);
        let from_y = if g > 0 { self.n_per_bridge[g - 1] } else { 0 };
        from_x + from_y
    }
}

/// Same-subject samples of two neighbouring groups.
#[derive(Debug, Clone, PartialEq)]
pub struct FacePairSet {
    pub bridge: usize,
    /// f x n, younger faces (group `bridge`).
    pub x: DMatrix<f64>,
    /// f x n, older faces (group `bridge + 1`).
    pub y: DMatrix<f64>,
    /// Source files of the columns of `x`, when loaded from disk.
    pub x_sources: Vec<PathBuf>,
    pub y_sources: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub dims: DatasetDims,
    pub bridges: Vec<FacePairSet>,
    /// Raw value that corresponds to 1.0; equals 1 once normalized.
    pub full_scale: f64,
    /// Image shape shared by graymap samples, if any.
    pub sample_shape: Option<(usize, usize)>,
}

impl DatasetBundle {
    /// Builds a bundle from in-memory pairs; `pairs[b] = (X^b, Y^b)`.
    pub fn from_pairs(
        pairs: Vec<(DMatrix<f64>, DMatrix<f64>)>,
        full_scale: f64,
        group_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let f = pairs.first().map(|(x, _)| x.nrows()).unwrap_or(0);
        let n_per_bridge = pairs.iter().map(|(x, _)| x.ncols()).collect();
        let dims = DatasetDims::new(f, n_per_bridge, group_labels)?;
        let bridges = pairs
            .into_iter()
            .enumerate()
            .map(|(bridge, (x, y))| FacePairSet {
                bridge,
                x,
                y,
                x_sources: Vec::new(),
                y_sources: Vec::new(),
            })
            .collect();
        let bundle = DatasetBundle {
            dims,
            bridges,
            full_scale,
            sample_shape: None,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.full_scale.is_finite() && self.full_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "full scale must be positive, got {}",
                self.full_scale
            )));
        }
        if self.bridges.len() != self.dims.bridges() {
            return Err(Error::dims("bridge count", self.dims.bridges(), self.bridges.len()));
        }
        for (b, pair) in self.bridges.iter().enumerate() {
            if pair.x.ncols() != pair.y.ncols() {
                return Err(Error::PairCountMismatch {
                    bridge: b + 1,
                    x: pair.x.ncols(),
                    y: pair.y.ncols(),
                });
            }
            if pair.x.ncols() != self.dims.n_per_bridge[b] {
                return Err(Error::dims(
                    format!("pairs in bridge {}", b + 1),
                    self.dims.n_per_bridge[b],
                    pair.x.ncols(),
                ));
            }
            for (side, m) in [("x", &pair.x), ("y", &pair.y)] {
                if m.nrows() != self.dims.f {
                    return Err(Error::dims(
                        format!("sample length in bridge {} ({side})", b + 1),
                        self.dims.f,
                        m.nrows(),
                    ));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("bridge {} ({side})", b + 1),
                    });
                }
            }
        }
        Ok(())
    }

    /// All columns observed in group `g`: X^g followed by Y^{g-1}.
    pub fn group_samples(&self, g: usize) -> Result<DMatrix<f64>> {
        if g >= self.dims.groups {
            return Err(Error::GroupOutOfRange {
                group: g,
                valid: format!("0..{}", self.dims.groups),
            });
        }
        let mut cols: Vec<DVector<f64>> = Vec::new();
        if let Some(pair) = self.bridges.get(g) {
            cols.extend(pair.x.column_iter().map(|c| c.into_owned()));
        }
        if g > 0 {
            cols.extend(self.bridges[g - 1].y.column_iter().map(|c| c.into_owned()));
        }
        if cols.is_empty() {
            return Err(Error::EmptyGroup { group: g });
        }
        Ok(DMatrix::from_columns(&cols))
    }

    pub fn is_normalized(&self) -> bool {
        self.full_scale == 1.0
    }
}

/// Per-group pixel means of the training columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageFaceSet {
    pub faces: Vec<DVector<f64>>,
}

/// Reads a manifest and every sample it references, then normalizes.
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetBundle> {
    let manifest = Manifest::read(manifest_path)?;
    let f = manifest.f;
    let mut full_scale: Option<f64> = None;
    let mut shape: Option<(usize, usize)> = None;

    let mut load_side = |paths: &[PathBuf]| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(f, paths.len());
        for (i, p) in paths.iter().enumerate() {
            let s = read_sample(p)?;
            if s.values.len() != f {
                return Err(Error::dims(format!("sample {}", p.display()), f, s.values.len()));
            }
            match full_scale {
                None => full_scale = Some(s.full_scale),
                Some(fs) if fs != s.full_scale => {
                    return Err(Error::Sample {
                        path: p.clone(),
                        message: format!(
                            "full-scale value {} differs from the dataset's {fs}",
                            s.full_scale
                        ),
                    })
                }
                _ => {}
            }
            if let Some(sh) = s.shape {
                match shape {
                    None => shape = Some(sh),
                    Some(prev) if prev != sh => {
                        return Err(Error::Sample {
                            path: p.clone(),
                            message: format!("image shape {sh:?} differs from {prev:?}"),
                        })
                    }
                    _ => {}
                }
            }
            m.set_column(i, &DVector::from_vec(s.values));
        }
        Ok(m)
    };

    let mut bridges = Vec::with_capacity(manifest.bridges.len());
    for (b, (xs, ys)) in manifest.bridges.iter().enumerate() {
        let x = load_side(xs)?;
        let y = load_side(ys)?;
        bridges.push(FacePairSet {
            bridge: b,
            x,
            y,
            x_sources: xs.clone(),
            y_sources: ys.clone(),
        });
    }
    let dims = DatasetDims::new(
        f,
        bridges.iter().map(|p| p.x.ncols()).collect(),
        manifest.labels.clone(),
    )?;
    let bundle = DatasetBundle {
        dims,
        bridges,
        full_scale: full_scale.unwrap_or(1.0),
        sample_shape: shape,
    };
    bundle.validate()?;
    normalize(&bundle)
}

/// Scales every entry by the dataset's full-scale value so that it lies in
/// [0,1]. Already-normalized bundles come back unchanged.
pub fn normalize(bundle: &DatasetBundle) -> Result<DatasetBundle> {
    bundle.validate()?;
    let scale = bundle.full_scale;
    let mut out = bundle.clone();
    for pair in out.bridges.iter_mut() {
        for (side, m) in [("x", &mut pair.x), ("y", &mut pair.y)] {
            if scale != 1.0 {
                m.iter_mut().for_each(|v| *v /= scale);
            }
            if let Some(&v) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRange {
                    value: v,
                    context: format!("normalized bridge {} ({side})", pair.bridge + 1),
                });
            }
        }
    }
    out.full_scale = 1.0;
    Ok(out)
}

pub fn compute_average_faces(bundle: &DatasetBundle) -> Result<AverageFaceSet> {
    let faces = (0..bundle.dims.groups)
        .map(|g| {
            let samples = bundle.group_samples(g)?;
            Ok(samples.column_mean())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AverageFaceSet { faces })
}
