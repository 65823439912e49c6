//! Deterministic injection targets: a random GEMM or a small MLP
//! classifier whose matmuls all run through the tiled engine.
//!
//! The MLP evaluates a whole synthetic dataset as one batch. Each layer is
//! `X · W` with `X` the batch activations (rows are samples) rounded into
//! the input format, followed by `max(0, x)` in binary32 except after the
//! last layer. Labels come from a binary64 forward pass of the same
//! weights, so reduced precision alone already costs a little accuracy.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{inject_guarded, FaultError, FaultSite, InjectionOutcome, SiteSpace};
use crate::fp_codec::{encode, Encoded, FpFormat};
use crate::gemm::{run_gemm, GemmError, GemmProblem, HookFn};
use crate::guard::{GuardKind, GuardReport};
use crate::hmma::HmmaShape;
use crate::matrix::Matrix;

const WEIGHTS_MAGIC: &[u8; 4] = b"MPWL";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("weights file: {0}")]
    Weights(String),
    #[error(transparent)]
    Gemm(#[from] GemmError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDistribution {
    /// uniform(-1, 1)
    Uniform,
    /// normal(0, 1)
    Normal,
    /// integers in [-8, 8]
    Integer,
}

impl ValueDistribution {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            ValueDistribution::Uniform => rng.random_range(-1.0..1.0),
            ValueDistribution::Normal => StandardNormal.sample(rng),
            ValueDistribution::Integer => rng.random_range(-8i32..=8) as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueDistribution::Uniform => "uniform",
            ValueDistribution::Normal => "normal",
            ValueDistribution::Integer => "integer",
        }
    }
}

impl std::str::FromStr for ValueDistribution {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(ValueDistribution::Uniform),
            "normal" => Ok(ValueDistribution::Normal),
            "integer" => Ok(ValueDistribution::Integer),
            other => Err(WorkloadError::Invalid(format!(
                "unknown distribution `{other}` (expected uniform, normal or integer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadKind {
    RandomGemm {
        m: usize,
        n: usize,
        k: usize,
        distribution: ValueDistribution,
    },
    Mlp {
        layer_dims: Vec<usize>,
        weight_seed: u64,
        dataset_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub format: FpFormat,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn random_gemm(
        format: FpFormat,
        (m, n, k): (usize, usize, usize),
        distribution: ValueDistribution,
        seed: u64,
    ) -> Self {
        WorkloadSpec {
            kind: WorkloadKind::RandomGemm { m, n, k, distribution },
            format,
            seed,
        }
    }

    pub fn mlp(format: FpFormat, layer_dims: Vec<usize>, weight_seed: u64, dataset_size: usize, seed: u64) -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Mlp {
                layer_dims,
                weight_seed,
                dataset_size,
            },
            format,
            seed,
        }
    }

    /// The reference classifier: `[64, 128, 64, 10]`, weight seed 42, 512
    /// samples.
    pub fn default_mlp(format: FpFormat) -> Self {
        Self::mlp(format, vec![64, 128, 64, 10], 42, 512, 42)
    }

    /// Short label used in trial records.
    pub fn label(&self) -> String {
        match &self.kind {
            WorkloadKind::RandomGemm { m, n, k, distribution } => format!("gemm:{m}x{n}x{k}:{}", distribution.name()),
            WorkloadKind::Mlp { layer_dims, .. } => {
                let dims: Vec<String> = layer_dims.iter().map(|d| d.to_string()).collect();
                format!("mlp:{}", dims.join("-"))
            }
        }
    }
}

/// Weights, dataset and labels of the MLP workload.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs; stored
    /// `dims[l] × dims[l + 1]`.
    pub weights: Vec<Matrix<f32>>,
    /// `dataset_size × dims[0]`.
    pub inputs: Matrix<f32>,
    pub labels: Vec<usize>,
}

impl Mlp {
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.inputs.cols()];
        dims.extend(self.weights.iter().map(|w| w.cols()));
        dims
    }

    /// Labels from a binary64 forward pass.
    pub fn teacher_labels(weights: &[Matrix<f32>], inputs: &Matrix<f32>) -> Vec<usize> {
        let mut act = inputs.map(|&v| v as f64);
        for (l, w) in weights.iter().enumerate() {
            let mut next = Matrix::filled(act.rows(), w.cols(), 0.0f64);
            for j in 0..w.cols() {
                for i in 0..act.rows() {
                    let mut acc = 0.0;
                    for k in 0..w.rows() {
                        acc += act.get(i, k) * w.get(k, j) as f64;
                    }
                    if l + 1 < weights.len() {
                        acc = acc.max(0.0);
                    }
                    next.set(i, j, acc);
                }
            }
            act = next;
        }
        argmax_rows(&act)
    }

    pub fn save_weights(&self, path: &Path) -> Result<(), WorkloadError> {
        fs::write(path, encode_weights(&self.weights))?;
        Ok(())
    }
}

/// Serializes weights as `MPWL`, version, layer count, layer dims, then
/// each layer's binary32 values (column-major), all little-endian.
pub fn encode_weights(weights: &[Matrix<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let mut dims = vec![weights.first().map_or(0, |w| w.rows())];
    dims.extend(weights.iter().map(|w| w.cols()));
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for w in weights {
        for v in w.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<Matrix<f32>>, WorkloadError> {
    let bad = |msg: &str| WorkloadError::Weights(msg.to_string());
    let mut words = bytes
        .get(4..)
        .ok_or_else(|| bad("truncated header"))?
        .chunks(4)
        .map(|c| <[u8; 4]>::try_from(c).map_err(|_| bad("truncated data")));
    if &bytes[..4] != WEIGHTS_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut next_u32 = || -> Result<u32, WorkloadError> {
        Ok(u32::from_le_bytes(
            words.next().ok_or_else(|| bad("truncated header"))??,
        ))
    };
    let version = next_u32()?;
    if version != WEIGHTS_VERSION {
        return Err(WorkloadError::Weights(format!("unsupported version {version}")));
    }
    let n_dims = next_u32()? as usize;
    if n_dims < 2 {
        return Err(bad("need at least two layer dims"));
    }
    let dims = (0..n_dims)
        .map(|_| next_u32().map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let mut weights = Vec::with_capacity(n_dims - 1);
    for pair in dims.windows(2) {
        let data = (0..pair[0] * pair[1])
            .map(|_| next_u32().map(f32::from_bits))
            .collect::<Result<Vec<_>, _>>()?;
        weights.push(Matrix::from_col_major(pair[0], pair[1], data).map_err(|e| bad(&e.to_string()))?);
    }
    if words.next().is_some() {
        return Err(bad("trailing bytes"));
    }
    Ok(weights)
}

pub fn load_weights(path: &Path) -> Result<Vec<Matrix<f32>>, WorkloadError> {
    decode_weights(&fs::read(path)?)
}

/// Index of the largest entry of every row; ties go to the lowest index
/// and NaN never wins.
pub fn argmax_rows<T: Copy + PartialOrd>(m: &Matrix<T>) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let mut best = 0;
            for c in 1..m.cols() {
                if m.get(r, c) > m.get(r, best) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Gemm(GemmProblem),
    Mlp(Mlp),
}

/// An executable workload.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    spec: WorkloadSpec,
    body: Body,
}

pub fn build_workload(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let body = match &spec.kind {
        WorkloadKind::RandomGemm { m, n, k, distribution } => {
            if *m == 0 || *n == 0 || *k == 0 {
                return Err(WorkloadError::Invalid(format!(
                    "gemm extents must be positive, got {m}x{n}x{k}"
                )));
            }
            let a = Matrix::from_fn(*m, *k, |_, _| distribution.sample(&mut rng));
            let b = Matrix::from_fn(*k, *n, |_, _| distribution.sample(&mut rng));
            let c = Matrix::from_fn(*m, *n, |_, _| distribution.sample(&mut rng) as f32);
            Body::Gemm(GemmProblem::from_values(spec.format, &a, &b, &c)?)
        }
        WorkloadKind::Mlp {
            layer_dims,
            weight_seed,
            dataset_size,
        } => {
            if layer_dims.len() < 2 || layer_dims.contains(&0) {
                return Err(WorkloadError::Invalid(format!(
                    "mlp needs at least two positive layer dims, got {layer_dims:?}"
                )));
            }
            let mut wrng = ChaCha8Rng::seed_from_u64(*weight_seed);
            let weights = layer_dims
                .windows(2)
                .map(|pair| {
                    let normal = Normal::new(0.0, 1.0 / (pair[0] as f64).sqrt()).expect("positive std");
                    Matrix::from_fn(pair[0], pair[1], |_, _| normal.sample(&mut wrng) as f32)
                })
                .collect();
            return Workload::mlp_with_weights(spec.format, weights, spec.seed, *dataset_size).map(|mut w| {
                w.spec = spec.clone();
                w
            });
        }
    };
    Ok(Workload {
        spec: spec.clone(),
        body,
    })
}

/// Fault-free execution: final outputs plus everything a faulty re-run
/// needs to start from.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenResult {
    /// Problem executed by each layer (one for a random GEMM).
    pub problems: Vec<GemmProblem>,
    /// Binary32 result of each layer before activation.
    pub layer_outputs: Vec<Matrix<f32>>,
    pub predictions: Option<Vec<usize>>,
    pub accuracy: Option<f64>,
}

impl GoldenResult {
    pub fn output(&self) -> &Matrix<f32> {
        self.layer_outputs.last().expect("at least one layer")
    }

    pub fn instruction_count(&self) -> usize {
        self.problems.iter().map(|p| p.instruction_count()).sum()
    }

    /// Maps a workload-wide instruction index to `(layer, local index)`.
    pub fn locate(&self, mut instr: usize) -> Option<(usize, usize)> {
        for (layer, p) in self.problems.iter().enumerate() {
            let count = p.instruction_count();
            if instr < count {
                return Some((layer, instr));
            }
            instr -= count;
        }
        None
    }
}

/// Result of one fault-injected execution.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultyRun {
    pub output: Matrix<f32>,
    pub injection: InjectionOutcome,
    pub guard: Option<GuardReport>,
    pub accuracy: Option<f64>,
}

impl Workload {
    /// An MLP with given weights and a fresh dataset drawn from `seed`.
    pub fn mlp_with_weights(
        format: FpFormat,
        weights: Vec<Matrix<f32>>,
        seed: u64,
        dataset_size: usize,
    ) -> Result<Self, WorkloadError> {
        if weights.is_empty() || dataset_size == 0 {
            return Err(WorkloadError::Invalid(
                "mlp needs weights and a nonempty dataset".into(),
            ));
        }
        for pair in weights.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(WorkloadError::Invalid(format!(
                    "layer output width {} does not match next input width {}",
                    pair[0].cols(),
                    pair[1].rows()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Matrix::from_fn(dataset_size, weights[0].rows(), |_, _| StandardNormal.sample(&mut rng))
            .map(|v: &f64| *v as f32);
        let labels = Mlp::teacher_labels(&weights, &inputs);
        let mlp = Mlp {
            weights,
            inputs,
            labels,
        };
        Ok(Workload {
            spec: WorkloadSpec::mlp(format, mlp.layer_dims(), 0, dataset_size, seed),
            body: Body::Mlp(mlp),
        })
    }

    /// Replaces the labels, e.g. to evaluate a modified network against the
    /// original teacher.
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self, WorkloadError> {
        match &mut self.body {
            Body::Mlp(mlp) if mlp.labels.len() == labels.len() => {
                mlp.labels = labels;
                Ok(self)
            }
            _ => Err(WorkloadError::Invalid("labels do not fit this workload".into())),
        }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn format(&self) -> FpFormat {
        self.spec.format
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        match &self.body {
            Body::Mlp(m) => Some(m),
            Body::Gemm(_) => None,
        }
    }

    /// Analytic HMMA count over all layers.
    pub fn instruction_count(&self) -> usize {
        let shape = HmmaShape::for_format(self.format());
        let tiles = |x: usize, t: usize| x.div_ceil(t);
        match &self.body {
            Body::Gemm(p) => p.instruction_count(),
            Body::Mlp(mlp) => {
                let batch = mlp.inputs.rows();
                mlp.weights
                    .iter()
                    .map(|w| tiles(batch, shape.m()) * tiles(w.cols(), shape.n()) * tiles(w.rows(), shape.k()))
                    .sum()
            }
        }
    }

    pub fn site_space(&self) -> SiteSpace {
        SiteSpace::new(self.instruction_count(), HmmaShape::for_format(self.format()))
    }

    fn layer_problem(&self, layer: usize, activations: &Matrix<f32>) -> Result<GemmProblem, WorkloadError> {
        let Body::Mlp(mlp) = &self.body else {
            unreachable!("layer problems only exist for mlp workloads")
        };
        let f = self.format();
        let a = activations.map(|&v| encode(v as f64, f));
        let b = mlp.weights[layer].map(|&v| encode(v as f64, f));
        let c = Matrix::filled(a.rows(), b.cols(), 0.0f32);
        Ok(GemmProblem::new(f, &a, &b, &c)?)
    }

    fn is_last(&self, layer: usize) -> bool {
        match &self.body {
            Body::Gemm(_) => true,
            Body::Mlp(mlp) => layer + 1 == mlp.weights.len(),
        }
    }

    fn accuracy(&self, output: &Matrix<f32>) -> (Option<Vec<usize>>, Option<f64>) {
        match &self.body {
            Body::Gemm(_) => (None, None),
            Body::Mlp(mlp) => {
                let predictions = argmax_rows(output);
                let correct = predictions.iter().zip(&mlp.labels).filter(|(p, l)| p == l).count();
                let acc = correct as f64 / mlp.labels.len() as f64;
                (Some(predictions), Some(acc))
            }
        }
    }

    pub fn run_golden(&self) -> Result<GoldenResult, WorkloadError> {
        let (problems, layer_outputs) = match &self.body {
            Body::Gemm(p) => (vec![p.clone()], vec![run_gemm(p, None)?]),
            Body::Mlp(mlp) => {
                let mut problems = Vec::with_capacity(mlp.weights.len());
                let mut outputs = Vec::with_capacity(mlp.weights.len());
                let mut act = mlp.inputs.clone();
                for layer in 0..mlp.weights.len() {
                    let p = self.layer_problem(layer, &act)?;
                    let d = run_gemm(&p, None)?;
                    act = d.map(|&v| relu(v));
                    problems.push(p);
                    outputs.push(d);
                }
                (problems, outputs)
            }
        };
        let (predictions, accuracy) = self.accuracy(layer_outputs.last().expect("one layer"));
        Ok(GoldenResult {
            problems,
            layer_outputs,
            predictions,
            accuracy,
        })
    }

    /// Re-executes the workload with one injected fault.
    ///
    /// Only the tiles a fault can reach are recomputed: the targeted
    /// 16×8 output tile (its K chain) in the injected layer, then the
    /// affected 16-row band of every later layer. Everything else is taken
    /// from `golden`, which is bit-identical to recomputing it.
    pub fn run_faulty(
        &self,
        golden: &GoldenResult,
        site: &FaultSite,
        guard: GuardKind,
    ) -> Result<FaultyRun, WorkloadError> {
        self.site_space().check(site)?;
        let (layer, local) = golden.locate(site.instr_index).expect("site checked");
        let problem = &golden.problems[layer];
        let shape = problem.shape();
        let coord = problem.instruction_stream().get(local).expect("local index in range");
        let row0 = coord.tile_m * shape.m();
        let col0 = coord.tile_n * shape.n();

        let sub = problem.sub_problem(row0, shape.m(), col0, shape.n());
        let (tile, injection, report) = run_injected(&sub, coord.tile_k, site, guard)?;

        // Band of rows row0..row0+16 of the current layer's output.
        let width = golden.layer_outputs[layer].cols();
        let mut band = golden.layer_outputs[layer].block(row0, 0, shape.m(), width, 0.0);
        band.paste(0, col0, &tile);
        for next in layer + 1..golden.problems.len() {
            let p = &golden.problems[next];
            let (_, pn, pk) = p.padded_extents();
            let act = band.map(|&v| encode(relu(v) as f64, self.format())).block(
                0,
                0,
                shape.m(),
                pk,
                Encoded::zero(self.format()),
            );
            let sub = p.sub_problem(row0, shape.m(), 0, pn).with_a_rows(0, &act);
            // Padded columns are not part of the layer output.
            band = run_gemm(&sub, None)?.block(0, 0, shape.m(), p.extents().1, 0.0);
        }
        let mut output = golden.output().clone();
        output.paste(row0, 0, &band);
        let (_, accuracy) = self.accuracy(&output);
        Ok(FaultyRun {
            output,
            injection,
            guard: report,
            accuracy,
        })
    }

    /// Reference for [`Workload::run_faulty`]: recomputes every layer in
    /// full with the hook installed on the injected layer.
    pub fn run_faulty_full(
        &self,
        golden: &GoldenResult,
        site: &FaultSite,
        guard: GuardKind,
    ) -> Result<FaultyRun, WorkloadError> {
        self.site_space().check(site)?;
        let (layer, local) = golden.locate(site.instr_index).expect("site checked");
        let mut act = match &self.body {
            Body::Gemm(_) => Matrix::filled(0, 0, 0.0),
            Body::Mlp(mlp) => mlp.inputs.clone(),
        };
        let mut result = None;
        let mut output = None;
        for l in 0..golden.problems.len() {
            let p = match &self.body {
                Body::Gemm(p) => p.clone(),
                Body::Mlp(_) => self.layer_problem(l, &act)?,
            };
            let d = if l == layer {
                let (d, injection, report) = run_injected(&p, local, site, guard)?;
                result = Some((injection, report));
                d
            } else {
                run_gemm(&p, None)?
            };
            if self.is_last(l) {
                output = Some(d);
                break;
            }
            act = d.map(|&v| relu(v));
        }
        let output = output.expect("last layer reached");
        let (injection, guard) = result.expect("injected layer executed");
        let (_, accuracy) = self.accuracy(&output);
        Ok(FaultyRun {
            output,
            injection,
            guard,
            accuracy,
        })
    }
}

fn relu(v: f32) -> f32 {
    // NaN passes through so that a poisoned activation stays visible.
    if v > 0.0 || v.is_nan() {
        v
    } else {
        0.0
    }
}

fn run_injected(
    p: &GemmProblem,
    target: usize,
    site: &FaultSite,
    guard: GuardKind,
) -> Result<(Matrix<f32>, InjectionOutcome, Option<GuardReport>), WorkloadError> {
    let mut captured: Option<Result<(InjectionOutcome, Option<GuardReport>), FaultError>> = None;
    let mut hook = HookFn::new(target, |_, state: &crate::hmma::WarpState<'_>| {
        let result = inject_guarded(state, site, guard);
        let wb = result.as_ref().ok().map(|(o, _)| o.write_back(site));
        captured = Some(result);
        wb
    });
    let d = run_gemm(p, Some(&mut hook))?;
    let (injection, report) = captured.expect("target instruction executed")?;
    Ok((d, injection, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{sample_site, FaultSpec};

    fn small_mlp(format: FpFormat) -> Workload {
        build_workload(&WorkloadSpec::mlp(format, vec![16, 32, 16, 8], 3, 48, 5)).unwrap()
    }

    #[test]
    fn random_gemm_single_problem() {
        let spec = WorkloadSpec::random_gemm(FpFormat::Tf32, (16, 8, 8), ValueDistribution::Integer, 1);
        let w = build_workload(&spec).unwrap();
        let g = w.run_golden().unwrap();
        assert_eq!(g.problems.len(), 1);
        assert_eq!(w.instruction_count(), 1);
        assert_eq!(g.accuracy, None);
        assert_eq!(spec.label(), "gemm:16x8x8:integer");
    }

    #[test]
    fn mlp_layers_and_routing() {
        let w = small_mlp(FpFormat::Bf16);
        let g = w.run_golden().unwrap();
        assert_eq!(g.problems.len(), 3);
        assert_eq!(g.instruction_count(), w.instruction_count());
        // 48 rows -> 3 tiles; 16->32: 3*4*1, 32->16: 3*2*2, 16->8: 3*1*1
        assert_eq!(w.instruction_count(), 12 + 12 + 3);
        let acc = g.accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn deterministic_construction() {
        let a = small_mlp(FpFormat::Fp16);
        let b = small_mlp(FpFormat::Fp16);
        assert_eq!(a, b);
        assert_eq!(a.run_golden().unwrap(), b.run_golden().unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = WorkloadSpec::mlp(FpFormat::Bf16, vec![16], 0, 8, 0);
        assert!(build_workload(&spec).is_err());
        let spec = WorkloadSpec::random_gemm(FpFormat::Bf16, (0, 8, 8), ValueDistribution::Normal, 0);
        assert!(build_workload(&spec).is_err());
        let w = vec![Matrix::filled(4, 3, 0.0f32), Matrix::filled(4, 2, 0.0f32)];
        assert!(Workload::mlp_with_weights(FpFormat::Bf16, w, 0, 8).is_err());
    }

    #[test]
    fn zero_weights_predict_class_zero() {
        let base = small_mlp(FpFormat::Bf16);
        let mlp = base.mlp().unwrap();
        let zeros: Vec<Matrix<f32>> = mlp.weights.iter().map(|w| w.map(|_| 0.0)).collect();
        let labels = mlp.labels.clone();
        let w = Workload::mlp_with_weights(FpFormat::Bf16, zeros, 5, 48)
            .unwrap()
            .with_labels(labels.clone())
            .unwrap();
        let g = w.run_golden().unwrap();
        assert!(g.output().as_slice().iter().all(|&v| v == 0.0));
        let zero_frac = labels.iter().filter(|&&l| l == 0).count() as f64 / labels.len() as f64;
        assert_eq!(g.accuracy.unwrap(), zero_frac);
    }

    #[test]
    fn weights_round_trip() {
        let w = small_mlp(FpFormat::Tf32);
        let mlp = w.mlp().unwrap();
        let bytes = encode_weights(&mlp.weights);
        assert_eq!(&bytes[..4], b"MPWL");
        assert_eq!(decode_weights(&bytes).unwrap(), mlp.weights);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.mpwl");
        mlp.save_weights(&path).unwrap();
        let rebuilt = Workload::mlp_with_weights(FpFormat::Tf32, load_weights(&path).unwrap(), 5, 48).unwrap();
        assert_eq!(rebuilt.mlp(), w.mlp());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
        assert!(decode_weights(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn incremental_matches_full_reexecution() {
        for format in FpFormat::ALL {
            let w = small_mlp(format);
            let g = w.run_golden().unwrap();
            let spec = FaultSpec::random(2).unwrap();
            for trial in 0..40 {
                let site = sample_site(&w.site_space(), &spec, format, 77, trial);
                let guard = if format == FpFormat::Bf16 && trial % 2 == 0 {
                    GuardKind::RangeCheckFlip
                } else {
                    GuardKind::None
                };
                let fast = w.run_faulty(&g, &site, guard).unwrap();
                let full = w.run_faulty_full(&g, &site, guard).unwrap();
                let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&fast.output), bits(&full.output), "{format} trial {trial}");
                assert_eq!(fast.accuracy, full.accuracy);
            }
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let m = Matrix::from_col_major(2, 3, vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(argmax_rows(&m), vec![0, 1]);
    }
}
