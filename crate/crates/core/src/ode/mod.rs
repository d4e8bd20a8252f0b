//! Dormand–Prince 5(4) integration of `dh/dt = f(h, t)` over `[0, T]`.
//!
//! The solver is written against [`OdeSystem`], which abstracts over how
//! states are stored and combined. Plain `Vec<f64>` systems are provided by
//! [`FnSystem`]; the model's ODE block implements the trait on top of the
//! autodiff tape so that accepted stages stay differentiable.

mod dopri5;

pub use dopri5::{dopri5_solve, fixed_step_solve, tableau};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OdeError {
    #[error("step size {step:e} fell below the floor {floor:e} at t = {t}")]
    StepUnderflow { t: f64, step: f64, floor: f64 },
    #[error("step budget of {max_steps} exceeded")]
    StepBudgetExceeded { max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] AutodiffError),
}

/// Whether stage evaluations feed a gradient computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeConfig {
    /// Used for both the relative and the absolute part of the error norm.
    pub tolerance: f64,
    pub depth_t: f64,
    pub initial_step: f64,
    pub max_steps: usize,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// Steps below `min_step_floor · depth_t` abort the solve.
    pub min_step_floor: f64,
}

impl OdeConfig {
    pub fn new(tolerance: f64, depth_t: f64) -> Self {
        Self {
            tolerance,
            depth_t,
            initial_step: depth_t / 10.0,
            max_steps: 1000,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            min_step_floor: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |m: &str| Err(OdeError::Config(m.to_string()));
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if !(self.depth_t > 0.0) {
            return bad("depth_t must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step <= self.depth_t) {
            return bad("initial_step must lie in (0, depth_t]");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.min_factor > 0.0 && self.min_factor <= self.max_factor) {
            return bad("growth clamp must satisfy 0 < min ≤ max");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<S> {
    pub terminal_state: S,
    pub nfe: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Every `t` at which the dynamics were evaluated, in call order.
    pub visited_times: Vec<f64>,
}

/// State storage and dynamics as seen by the solver.
pub trait OdeSystem {
    type State: Clone;

    fn eval(&mut self, h: &Self::State, t: f64) -> Result<Self::State, OdeError>;

    /// `base + Σ coef · term`.
    fn combine(
        &mut self,
        base: &Self::State,
        terms: &[(f64, &Self::State)],
    ) -> Result<Self::State, OdeError>;

    /// Flat copy of the state's values, used for error control only.
    fn values(&self, s: &Self::State) -> Vec<f64>;

    /// Marks the start of a step attempt.
    fn checkpoint(&mut self) -> usize {
        0
    }

    /// Discards everything recorded since `mark`; called for rejected steps.
    fn rollback(&mut self, _mark: usize) {}
}

/// An [`OdeSystem`] over plain `Vec<f64>` states driven by a closure.
pub struct FnSystem<F> {
    f: F,
}

impl<F> FnSystem<F>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    type State = Vec<f64>;

    fn eval(&mut self, h: &Vec<f64>, t: f64) -> Result<Vec<f64>, OdeError> {
        Ok((self.f)(h, t))
    }

    fn combine(&mut self, base: &Vec<f64>, terms: &[(f64, &Vec<f64>)]) -> Result<Vec<f64>, OdeError> {
        let mut out = base.clone();
        for &(c, term) in terms {
            if c == 0.0 {
                continue;
            }
            // Zero increments are skipped so a signed zero in `base` survives.
            for (o, &v) in out.iter_mut().zip(term.iter()) {
                let d = c * v;
                if d != 0.0 {
                    *o += d;
                }
            }
        }
        Ok(out)
    }

    fn values(&self, s: &Vec<f64>) -> Vec<f64> {
        s.clone()
    }
}
