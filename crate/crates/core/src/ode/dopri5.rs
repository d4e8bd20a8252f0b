use super::{OdeConfig, OdeError, OdeSystem, SolveResult};

/// Butcher tableau of the Dormand–Prince 5(4) pair.
pub mod tableau {
    pub const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];

    /// Fifth-order weights (equal to the last row of `A`, so the final stage
    /// is evaluated at the accepted state).
    pub const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];

    pub const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
}

use tableau::{A, B4, B5, C};

struct Counters {
    nfe: usize,
    visited: Vec<f64>,
}

impl Counters {
    fn eval<S: OdeSystem>(
        &mut self,
        sys: &mut S,
        h: &S::State,
        t: f64,
    ) -> Result<(S::State, Vec<f64>), OdeError> {
        self.nfe += 1;
        self.visited.push(t);
        let k = sys.eval(h, t)?;
        let vals = sys.values(&k);
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFiniteState { t });
        }
        Ok((k, vals))
    }
}

/// Stages 2..=7 of one step starting from `(t, y)` with first stage `k1`.
/// Returns all seven stages with their values and the proposed 5th-order
/// state (which is the input of stage 7).
#[allow(clippy::type_complexity)]
fn step_stages<S: OdeSystem>(
    sys: &mut S,
    counters: &mut Counters,
    y: &S::State,
    t: f64,
    h: f64,
    k1: (S::State, Vec<f64>),
) -> Result<(Vec<(S::State, Vec<f64>)>, S::State), OdeError> {
    let mut ks = Vec::with_capacity(7);
    ks.push(k1);
    let mut y_next = None;
    for i in 1..7 {
        let terms: Vec<(f64, &S::State)> = (0..i)
            .filter(|&j| A[i][j] != 0.0)
            .map(|j| (h * A[i][j], &ks[j].0))
            .collect();
        let yi = sys.combine(y, &terms)?;
        let k = counters.eval(sys, &yi, t + C[i] * h)?;
        ks.push(k);
        if i == 6 {
            y_next = Some(yi);
        }
    }
    Ok((ks, y_next.expect("seven stages")))
}

fn check_initial(vals: &[f64]) -> Result<(), OdeError> {
    if vals.iter().any(|v| !v.is_finite()) {
        Err(OdeError::NonFiniteState { t: 0.0 })
    } else {
        Ok(())
    }
}

/// Adaptive integration from `t = 0` to `cfg.depth_t`.
///
/// A step is accepted when the RMS of `e_i / (tol + tol·max(|y_i|, |y'_i|))`
/// is at most one; the next step is scaled by
/// `clamp(safety · err^(-1/5), min_factor, max_factor)`. Rejected attempts
/// are rolled back on the system but still count towards `nfe`.
pub fn dopri5_solve<S: OdeSystem>(
    sys: &mut S,
    h0: &S::State,
    cfg: &OdeConfig,
) -> Result<SolveResult<S::State>, OdeError> {
    cfg.validate()?;
    let y0_vals = sys.values(h0);
    check_initial(&y0_vals)?;
    let depth = cfg.depth_t;
    let floor = cfg.min_step_floor * depth;
    let tol = cfg.tolerance;

    let mut counters = Counters {
        nfe: 0,
        visited: Vec::new(),
    };
    let mut k1 = counters.eval(sys, h0, 0.0)?;
    let mut y = h0.clone();
    let mut y_vals = y0_vals;
    let mut t = 0.0f64;
    let mut step = cfg.initial_step;
    let (mut accepted, mut rejected) = (0usize, 0usize);

    while t < depth {
        if accepted + rejected >= cfg.max_steps {
            return Err(OdeError::StepBudgetExceeded {
                max_steps: cfg.max_steps,
            });
        }
        let last = t + step >= depth * (1.0 - 1e-12);
        if last {
            step = depth - t;
        }
        if step < floor {
            return Err(OdeError::StepUnderflow { t, step, floor });
        }

        let mark = sys.checkpoint();
        let (ks, y_next) = step_stages(sys, &mut counters, &y, t, step, k1.clone())?;
        let next_vals = sys.values(&y_next);

        let mut sum_sq = 0.0;
        for i in 0..y_vals.len() {
            let e: f64 = (0..7)
                .map(|j| (B5[j] - B4[j]) * ks[j].1[i])
                .sum::<f64>()
                * step;
            let scale = tol + tol * y_vals[i].abs().max(next_vals[i].abs());
            sum_sq += (e / scale).powi(2);
        }
        let err = (sum_sq / y_vals.len().max(1) as f64).sqrt();

        if err <= 1.0 {
            accepted += 1;
            t = if last { depth } else { t + step };
            y = y_next;
            y_vals = next_vals;
            k1 = ks.into_iter().nth(6).expect("seven stages");
        } else {
            rejected += 1;
            sys.rollback(mark);
        }
        let factor = if err == 0.0 {
            cfg.max_factor
        } else {
            (cfg.safety * err.powf(-0.2)).clamp(cfg.min_factor, cfg.max_factor)
        };
        step *= factor;
    }

    Ok(SolveResult {
        terminal_state: y,
        nfe: counters.nfe,
        accepted_steps: accepted,
        rejected_steps: rejected,
        visited_times: counters.visited,
    })
}

/// `n_steps` equal steps of the same tableau without error control.
pub fn fixed_step_solve<S: OdeSystem>(
    sys: &mut S,
    h0: &S::State,
    n_steps: usize,
    cfg: &OdeConfig,
) -> Result<SolveResult<S::State>, OdeError> {
    if n_steps == 0 {
        return Err(OdeError::Config("n_steps must be ≥ 1".into()));
    }
    if !(cfg.depth_t > 0.0) {
        return Err(OdeError::Config("depth_t must be positive".into()));
    }
    check_initial(&sys.values(h0))?;
    let step = cfg.depth_t / n_steps as f64;
    let mut counters = Counters {
        nfe: 0,
        visited: Vec::new(),
    };
    let mut k1 = counters.eval(sys, h0, 0.0)?;
    let mut y = h0.clone();
    for n in 0..n_steps {
        let t = cfg.depth_t * n as f64 / n_steps as f64;
        let (ks, y_next) = step_stages(sys, &mut counters, &y, t, step, k1)?;
        y = y_next;
        k1 = ks.into_iter().nth(6).expect("seven stages");
    }
    Ok(SolveResult {
        terminal_state: y,
        nfe: counters.nfe,
        accepted_steps: n_steps,
        rejected_steps: 0,
        visited_times: counters.visited,
    })
}
