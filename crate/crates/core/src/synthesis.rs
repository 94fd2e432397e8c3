//! Age-progression synthesis for a single input sample.
//!
//! Each step renders the face of group `c + 1` from the face of group `c` by
//! jointly coding the pair `(current face, estimate of the next face)` over
//! the stacked dictionaries `[D^c; D^{c+1}]` with a shared personalized layer.
//! A pass chains steps from the start group to the oldest group; later passes
//! reuse the previous pass's faces as estimates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::AgingModel;
use crate::sparse_coding::{GramLasso, LassoOptions};

pub const DEFAULT_PASSES: usize = 3;
const MAX_ALTERNATIONS: usize = 100;
const ALTERNATION_REL_TOL: f64 = 1e-6;

/// How the personalized layer combines with the dictionary reconstruction
/// in an emitted face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignConvention {
    /// `H D a + p`, the same algebra as the training objective.
    #[default]
    Add,
    /// `H D a - p`
    Subtract,
}

impl SignConvention {
    fn factor(self) -> f64 {
        match self {
            SignConvention::Add => 1.0,
            SignConvention::Subtract => -1.0,
        }
    }
}

impl FromStr for SignConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(SignConvention::Add),
            "subtract" => Ok(SignConvention::Subtract),
            other => Err(Error::InvalidParameter(format!(
                "sign convention must be `add` or `subtract`, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for SignConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignConvention::Add => "add",
            SignConvention::Subtract => "subtract",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    /// f-dimensional face in [0,1].
    pub input: DVector<f64>,
    /// Zero-based group of the input; must be below the oldest group.
    pub start_group: usize,
    pub passes: usize,
    pub sign: SignConvention,
}

impl SynthesisRequest {
    pub fn new(input: DVector<f64>, start_group: usize) -> Self {
        SynthesisRequest {
            input,
            start_group,
            passes: DEFAULT_PASSES,
            sign: SignConvention::Add,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Emitted face, clamped to [0,1].
    pub face: DVector<f64>,
    /// Unclamped face used to continue the chain.
    pub raw_face: DVector<f64>,
    /// Shared sparse code (k).
    pub code: DVector<f64>,
    /// Personalized layer in reduced coordinates (m).
    pub layer: DVector<f64>,
    /// Personalized layer lifted through the target group's basis (f).
    pub layer_lifted: DVector<f64>,
    /// Objective after each code/layer alternation.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// One-based pass number.
    pub pass: usize,
    /// Zero-based group the step starts from.
    pub from_group: usize,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgingSequence {
    pub start_group: usize,
    /// Faces for groups `start_group + 1 ..= G - 1`, clamped to [0,1].
    pub faces: Vec<DVector<f64>>,
    /// Final-pass codes, one per step.
    pub codes: Vec<DVector<f64>>,
    /// Final-pass personalized layers (f-dimensional view), one per step.
    pub personalized: Vec<DVector<f64>>,
    /// Every step of every pass, in execution order.
    pub diagnostics: Vec<StepDiagnostics>,
    /// Unclamped faces produced by each pass.
    pub pass_faces: Vec<Vec<DVector<f64>>>,
}

fn check_model(model: &AgingModel) -> Result<()> {
    let g = model.groups();
    if model.dictionaries.len() != g || model.bases.len() != g || model.averages.faces.len() != g {
        return Err(Error::InvalidParameter(
            "model is incomplete: expected one dictionary, basis and average face per group".into(),
        ));
    }
    Ok(())
}

/// Renders the face of group `g + 1` from `x_current` (group `g`) and an
/// estimate of the target face.
pub fn synthesize_step(
    model: &AgingModel,
    x_current: &DVector<f64>,
    estimate: &DVector<f64>,
    g: usize,
    sign: SignConvention,
) -> Result<StepOutput> {
    check_model(model)?;
    let groups = model.groups();
    if g + 1 >= groups {
        return Err(Error::GroupOutOfRange {
            group: g,
            valid: format!("0..{}", groups - 1),
        });
    }
    let (young_basis, old_basis) = (&model.bases[g], &model.bases[g + 1]);
    let (d_young, d_old) = (&model.dictionaries[g].d, &model.dictionaries[g + 1].d);
    if d_young.nrows() != young_basis.m() || d_old.nrows() != old_basis.m() || d_young.ncols() != d_old.ncols() {
        return Err(Error::dims("dictionary rows", young_basis.m(), d_young.nrows()));
    }
    let x = young_basis.project(x_current)?;
    let e = old_basis.project(estimate)?;

    let (lambda, gamma) = (model.hyper.lambda, model.hyper.gamma);
    let options = LassoOptions {
        tol: model.hyper.lasso_tol,
        max_sweeps: model.hyper.lasso_sweeps(),
    };
    let gram = d_young.tr_mul(d_young) + d_old.tr_mul(d_old);
    let solver = GramLasso::new(gram, lambda, options)?;

    let k = d_young.ncols();
    let mut code = DVector::zeros(k);
    let mut layer = DVector::zeros(x.len());
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..MAX_ALTERNATIONS {
        let corr = d_young.tr_mul(&(&x - &layer)) + d_old.tr_mul(&(&e - &layer));
        code = solver.solve(&corr, Some(&code))?.coef;
        let rx = &x - d_young * &code;
        let re = &e - d_old * &code;
        layer = (&rx + &re) / (2.0 + gamma);
        let obj = (&rx - &layer).norm_squared()
            + (&re - &layer).norm_squared()
            + lambda * code.lp_norm(1)
            + gamma * layer.norm_squared();
        let done = match trace.last() {
            Some(&prev) => (prev - obj).abs() < ALTERNATION_REL_TOL * prev.abs() || obj == prev,
            None => obj == 0.0,
        };
        trace.push(obj);
        if done {
            break;
        }
    }

    let layer_lifted = old_basis.lift(&layer)?;
    let raw_face = old_basis.lift(&(d_old * &code))? + sign.factor() * &layer_lifted;
    let face = raw_face.map(|v| v.clamp(0.0, 1.0));
    Ok(StepOutput {
        face,
        raw_face,
        code,
        layer,
        layer_lifted,
        objective_trace: trace,
    })
}

/// Runs `request.passes` full sweeps from the start group to the oldest
/// group. The first pass uses the group average faces as estimates.
pub fn synthesize_sequence(model: &AgingModel, request: &SynthesisRequest) -> Result<AgingSequence> {
    check_model(model)?;
    let groups = model.groups();
    let g = request.start_group;
    if g + 1 >= groups {
        return Err(Error::GroupOutOfRange {
            group: g,
            valid: format!("0..{}", groups - 1),
        });
    }
    if request.passes == 0 {
        return Err(Error::InvalidParameter("passes must be at least 1".into()));
    }
    if request.input.len() != model.f() {
        return Err(Error::dims("input sample", model.f(), request.input.len()));
    }
    if request.input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "synthesis input".into(),
        });
    }

    // estimates[j] targets group g + 1 + j
    let mut estimates: Vec<DVector<f64>> = model.averages.faces[g + 1..].to_vec();
    let mut diagnostics = Vec::new();
    let mut pass_faces = Vec::with_capacity(request.passes);
    let mut last_steps: Vec<StepOutput> = Vec::new();
    for pass in 1..=request.passes {
        let mut current = request.input.clone();
        let mut steps = Vec::with_capacity(estimates.len());
        for (j, estimate) in estimates.iter().enumerate() {
            let out = synthesize_step(model, &current, estimate, g + j, request.sign)?;
            diagnostics.push(StepDiagnostics {
                pass,
                from_group: g + j,
                objective_trace: out.objective_trace.clone(),
            });
            current = out.raw_face.clone();
            steps.push(out);
        }
        estimates = steps.iter().map(|s| s.raw_face.clone()).collect();
        pass_faces.push(estimates.clone());
        last_steps = steps;
    }

    Ok(AgingSequence {
        start_group: g,
        faces: last_steps.iter().map(|s| s.face.clone()).collect(),
        codes: last_steps.iter().map(|s| s.code.clone()).collect(),
        personalized: last_steps.iter().map(|s| s.layer_lifted.clone()).collect(),
        diagnostics,
        pass_faces,
    })
}

/// Relative change `||a - b|| / ||b||` summed over the faces of two passes.
pub fn pass_change(current: &[DVector<f64>], previous: &[DVector<f64>]) -> f64 {
    let num: f64 = current.iter().zip(previous).map(|(a, b)| (a - b).norm_squared()).sum();
    let den: f64 = previous.iter().map(|b| b.norm_squared()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
