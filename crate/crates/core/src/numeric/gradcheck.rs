//! Central finite-difference check of tape gradients, in `f64`.

use super::{ParamStore, Tape, Tensor, Var};

/// Largest relative disagreement found by [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Which scalar produced `max_rel_err`, e.g. `"leaf 0 [3]"` or `"layer0.ff1.w [12]"`.
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the reverse-mode gradient of `build` against central differences
/// with step `h` for every scalar in `leaves` and in `store`.
///
/// `build` receives one leaf variable per entry of `leaves` and must return a
/// scalar loss.
pub fn check_gradients<F>(leaves: &[Tensor<f64>], store: &ParamStore<f64>, h: f64, build: F) -> GradReport
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>, &[Var]) -> Var,
{
    let eval = |leaves: &[Tensor<f64>], store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, store, &vars);
        tape.value(loss).get(0, 0)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, store, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    let mut param_grads: Vec<Tensor<f64>> = store
        .ids()
        .map(|id| {
            let v = store.value(id);
            Tensor::zeros(v.rows(), v.cols())
        })
        .collect();
    for (id, g) in grads.params() {
        param_grads[id.0].add_assign(g);
    }

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |analytic: f64, numeric: f64, label: &dyn Fn() -> String| {
        let e = rel_err(analytic, numeric, 1e-6);
        report.checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e;
            report.worst = label();
        }
    };

    for (li, leaf) in leaves.iter().enumerate() {
        let zero = Tensor::zeros(leaf.rows(), leaf.cols());
        let analytic = grads.wrt(vars[li]).unwrap_or(&zero);
        for k in 0..leaf.len() {
            let mut shifted = leaves.to_vec();
            shifted[li].data_mut()[k] = leaf.data()[k] + h;
            let up = eval(&shifted, store);
            shifted[li].data_mut()[k] = leaf.data()[k] - h;
            let down = eval(&shifted, store);
            record(analytic.data()[k], (up - down) / (2.0 * h), &|| {
                format!("leaf {li} [{k}]")
            });
        }
    }

    let mut work = store.clone();
    for id in store.ids() {
        let base = store.value(id).clone();
        for k in 0..base.len() {
            work.value_mut(id).data_mut()[k] = base.data()[k] + h;
            let up = eval(leaves, &work);
            work.value_mut(id).data_mut()[k] = base.data()[k] - h;
            let down = eval(leaves, &work);
            work.value_mut(id).data_mut()[k] = base.data()[k];
            record(param_grads[id.0].data()[k], (up - down) / (2.0 * h), &|| {
                format!("{} [{k}]", store.name(id))
            });
        }
    }
    report
}
