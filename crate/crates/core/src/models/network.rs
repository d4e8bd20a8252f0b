use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{Family, ModelSpec, INPUT_COEFFS, INPUT_FRAMES};
use super::ModelError;
use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::lbn::{LbnDatabase, LbnLayer, NormMode};
use crate::ode::{dopri5_solve, fixed_step_solve, OdeConfig, OdeError, OdeSystem, SolveResult};

/// How the ODE block is integrated.
#[derive(Clone, Debug, PartialEq)]
pub enum Solver {
    Adaptive { tolerance: f64 },
    /// Equal steps without error control; used for gradient checks.
    Fixed { n_steps: usize },
}

/// Parameters and wiring of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
    stem: ParamId,
    ode: Vec<ParamId>,
    fc: ParamId,
    stem_norm: LbnLayer,
    ode_norms: Vec<LbnLayer>,
}

/// A network plus the layer-dependent normalization statistics it is
/// evaluated with.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub net: Network<T>,
    pub db: LbnDatabase,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub nfe: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub visited_times: Vec<f64>,
    /// Dynamics invocations counted by the network itself.
    pub dynamics_calls: usize,
}

/// Result of an inference pass for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub nfe: usize,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

pub const STEM_NORM: &str = "stem.bn";

impl<T: Real> Network<T> {
    /// Builds the variant with fan-in uniform kernels drawn from `seed`.
    pub fn build(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = spec.width;
        let mut params = ParamStore::new();
        let stem = params.add_fan_in_uniform("stem.weight", &[3, INPUT_COEFFS, w], 3 * INPUT_COEFFS, &mut rng);
        let (ode, ode_norms) = match spec.family() {
            Family::Tcnn => (
                vec![
                    params.add_fan_in_uniform("ode.conv1.weight", &[9, w, w], 9 * w, &mut rng),
                    params.add_fan_in_uniform("ode.conv2.weight", &[9, w, w], 9 * w, &mut rng),
                    params.add_fan_in_uniform("ode.conv3.weight", &[1, w, w], w, &mut rng),
                ],
                vec![
                    LbnLayer::new("ode.bn1", w),
                    LbnLayer::new("ode.bn2", w),
                    LbnLayer::new("ode.bn3", w),
                ],
            ),
            Family::Tdnn => (
                vec![params.add_fan_in_uniform("ode.tdnn.weight", &[3, w, w], 3 * w, &mut rng)],
                vec![LbnLayer::new("ode.bn1", w)],
            ),
        };
        let fc = params.add_fan_in_uniform("fc.weight", &[w, spec.n_classes], w, &mut rng);
        Self {
            stem_norm: LbnLayer::new(STEM_NORM, w),
            spec,
            params,
            stem,
            ode,
            fc,
            ode_norms,
        }
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = &LbnLayer> {
        std::iter::once(&self.stem_norm).chain(self.ode_norms.iter())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.cast(),
            stem: self.stem,
            ode: self.ode.clone(),
            fc: self.fc,
            stem_norm: self.stem_norm.clone(),
            ode_norms: self.ode_norms.clone(),
        }
    }

    /// Parameter handles on `tape`, created once per forward pass.
    fn param_vars(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            stem: tape.param(&self.params, self.stem),
            ode: self.ode.iter().map(|&id| tape.param(&self.params, id)).collect(),
            fc: tape.param(&self.params, self.fc),
        }
    }

    /// The ODE block's vector field at `(h, t)`. `h` is `(batch, l, width)`.
    pub fn dynamics(
        &self,
        tape: &mut Tape<T>,
        weights: &[Var],
        h: Var,
        t: f64,
        norm: &mut NormMode<'_>,
    ) -> Result<Var, ModelError> {
        let dims = tape.value(h).dims().to_vec();
        if dims.len() != 3 || dims[1] != self.spec.state_len() || dims[2] != self.spec.width {
            return Err(ModelError::Shape(format!(
                "{} dynamics expect (batch, {}, {}), got {:?}",
                self.spec.variant,
                self.spec.state_len(),
                self.spec.width,
                dims
            )));
        }
        let out = match self.spec.family() {
            Family::Tcnn => {
                let a = tape.conv_temporal(h, weights[0], 1, 4)?;
                let a = norm.apply(tape, a, t, &self.ode_norms[0])?;
                let a = tape.relu(a)?;
                let a = tape.conv_temporal(a, weights[1], 1, 4)?;
                let a = norm.apply(tape, a, t, &self.ode_norms[1])?;
                let a = tape.relu(a)?;
                let a = tape.conv_temporal(a, weights[2], 1, 0)?;
                norm.apply(tape, a, t, &self.ode_norms[2])?
            }
            Family::Tdnn => {
                let a = tape.conv_temporal(h, weights[0], 1, 1)?;
                let a = norm.apply(tape, a, t, &self.ode_norms[0])?;
                tape.relu(a)?
            }
        };
        Ok(out)
    }

    /// Full pipeline on `features` of dims `(batch, 101, 40)`. Returns logits
    /// of dims `(batch, 1, n_classes)`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        features: Var,
        norm: &mut NormMode<'_>,
        solver: &Solver,
    ) -> Result<ForwardOutput, ModelError> {
        let dims = tape.value(features).dims().to_vec();
        if dims.len() != 3 || dims[1] != INPUT_FRAMES || dims[2] != INPUT_COEFFS {
            return Err(ModelError::Shape(format!(
                "features must be (batch, {INPUT_FRAMES}, {INPUT_COEFFS}), got {dims:?}"
            )));
        }
        let pv = self.param_vars(tape);
        let stride = match self.spec.family() {
            Family::Tcnn => 1,
            Family::Tdnn => 3,
        };
        let x = tape.conv_temporal(features, pv.stem, stride, 1)?;
        let x = norm.apply(tape, x, 0.0, &self.stem_norm)?;
        let mut h0 = tape.relu(x)?;
        if self.spec.family() == Family::Tcnn {
            h0 = tape.avg_pool_temporal(h0, 4, 4)?;
        }

        let mut system = BlockSystem {
            net: self,
            tape,
            weights: &pv.ode,
            norm,
            calls: 0,
        };
        let cfg_for = |tolerance| OdeConfig::new(tolerance, self.spec.depth_t);
        let solved: SolveResult<Var> = match solver {
            Solver::Adaptive { tolerance } => dopri5_solve(&mut system, &h0, &cfg_for(*tolerance))?,
            Solver::Fixed { n_steps } => {
                fixed_step_solve(&mut system, &h0, *n_steps, &cfg_for(self.spec.train_tolerance))?
            }
        };
        let calls = system.calls;

        let len = self.spec.state_len();
        let pooled = tape.avg_pool_temporal(solved.terminal_state, len, len)?;
        let logits = tape.affine(pooled, pv.fc)?;
        Ok(ForwardOutput {
            logits,
            nfe: solved.nfe,
            accepted_steps: solved.accepted_steps,
            rejected_steps: solved.rejected_steps,
            visited_times: solved.visited_times,
            dynamics_calls: calls,
        })
    }
}

struct ParamVars {
    stem: Var,
    ode: Vec<Var>,
    fc: Var,
}

/// The ODE block as seen by the solver: states are tape variables, and
/// rejected step attempts are truncated off the tape.
struct BlockSystem<'a, 'n, T> {
    net: &'a Network<T>,
    tape: &'a mut Tape<T>,
    weights: &'a [Var],
    norm: &'a mut NormMode<'n>,
    calls: usize,
}

impl<T: Real> OdeSystem for BlockSystem<'_, '_, T> {
    type State = Var;

    fn eval(&mut self, h: &Var, t: f64) -> Result<Var, OdeError> {
        self.calls += 1;
        self.net
            .dynamics(self.tape, self.weights, *h, t, self.norm)
            .map_err(|e| match e {
                ModelError::Autodiff(a) => OdeError::Dynamics(a),
                ModelError::Lbn(crate::lbn::LbnError::Autodiff(a)) => OdeError::Dynamics(a),
                other => OdeError::Dynamics(crate::autodiff::AutodiffError::Graph(other.to_string())),
            })
    }

    fn combine(&mut self, base: &Var, terms: &[(f64, &Var)]) -> Result<Var, OdeError> {
        let terms: Vec<(T, Var)> = terms.iter().map(|&(c, v)| (T::of(c), *v)).collect();
        Ok(self.tape.lincomb(*base, &terms)?)
    }

    fn values(&self, s: &Var) -> Vec<f64> {
        self.tape.value(*s).data().iter().map(|v| v.as_f64()).collect()
    }

    fn checkpoint(&mut self) -> usize {
        self.tape.len()
    }

    fn rollback(&mut self, mark: usize) {
        self.tape.truncate(mark);
    }
}

/// Stacks feature matrices (each `101 × 40`, row-major) into a batch tensor.
pub fn batch_tensor<T: Real>(features: &[&[f32]]) -> Result<Tensor<T>, ModelError> {
    let per = INPUT_FRAMES * INPUT_COEFFS;
    if features.is_empty() {
        return Err(ModelError::Shape("empty batch".into()));
    }
    let mut data = Vec::with_capacity(per * features.len());
    for f in features {
        if f.len() != per {
            return Err(ModelError::Shape(format!(
                "feature matrix has {} values, expected {per}",
                f.len()
            )));
        }
        data.extend(f.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::new(vec![features.len(), INPUT_FRAMES, INPUT_COEFFS], data)?)
}

impl<T: Real> Model<T> {
    pub fn build(spec: ModelSpec, seed: u64) -> Self {
        Self {
            net: Network::build(spec, seed),
            db: LbnDatabase::new(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.net.spec
    }

    /// Training-mode forward pass on a batch: batch statistics, database
    /// updates, every accepted stage on the tape.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<T>,
        features: &[&[f32]],
        solver: &Solver,
    ) -> Result<ForwardOutput, ModelError> {
        let x = tape.leaf(batch_tensor(features)?);
        let mut norm = NormMode::Train(&mut self.db);
        self.net.forward(tape, x, &mut norm, solver)
    }

    /// Layer-dependent inference on one sample.
    pub fn infer_one(&self, features: &[f32], tolerance: f64) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch_tensor(&[features])?);
        let mut norm = NormMode::Infer(&self.db);
        let out = self.net.forward(&mut tape, x, &mut norm, &Solver::Adaptive { tolerance })?;
        Ok(Prediction {
            logits: tape.value(out.logits).data().iter().map(|v| v.as_f64() as f32).collect(),
            nfe: out.nfe,
        })
    }

    /// Layer-dependent inference on a batch. Every sample gets its own
    /// adaptive solve so neither statistics nor step sizes are shared.
    pub fn infer_batch(&self, features: &[&[f32]], tolerance: f64) -> Result<Vec<Prediction>, ModelError> {
        use rayon::prelude::*;
        features
            .par_iter()
            .map(|f| self.infer_one(f, tolerance))
            .collect()
    }

    /// Conventional inference: every normalization uses the statistics of
    /// `features` itself and the batch is integrated jointly.
    pub fn infer_naive(&self, features: &[&[f32]], tolerance: f64) -> Result<Vec<Prediction>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch_tensor(features)?);
        let mut norm = NormMode::Naive;
        let out = self.net.forward(&mut tape, x, &mut norm, &Solver::Adaptive { tolerance })?;
        let n = self.net.spec.n_classes;
        Ok(tape
            .value(out.logits)
            .data()
            .chunks_exact(n)
            .map(|row| Prediction {
                logits: row.iter().map(|v| v.as_f64() as f32).collect(),
                nfe: out.nfe,
            })
            .collect())
    }
}
