use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParamStore, Tape, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub worst_rel_err: f64,
    /// `name[index]` of the worst coordinate.
    pub worst_at: String,
    pub coordinates: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks up to `per_param` random coordinates of every parameter in
/// `store`. `loss_of` must build a scalar on the given tape from the given
/// store; parameter values are restored afterwards.
pub fn check_gradients(
    store: &mut ParamStore<f64>,
    loss_of: &dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, AutodiffError>,
    per_param: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, AutodiffError> {
    let value = |s: &ParamStore<f64>| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let l = loss_of(&mut tape, s)?;
        Ok(tape.value(l).data()[0])
    };
    let mut tape = Tape::new();
    let loss = loss_of(&mut tape, store)?;
    store.zero_grads();
    tape.backward(loss, store)?;
    let grads: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    let ids: Vec<_> = store.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        worst_rel_err: 0.0,
        worst_at: String::new(),
        coordinates: 0,
    };
    for (pi, &id) in ids.iter().enumerate() {
        let n = store.get(id).value.len();
        for k in sample(&mut rng, n, n.min(per_param)) {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + step;
            let up = value(store);
            store.get_mut(id).value.data_mut()[k] = orig - step;
            let down = value(store);
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up? - down?) / (2.0 * step);
            let e = relative_error(grads[pi][k], numeric, 1e-6);
            report.coordinates += 1;
            if e >= report.worst_rel_err {
                report.worst_rel_err = e;
                report.worst_at = format!("{}[{k}]", store.get(id).name);
            }
        }
    }
    Ok(report)
}
