//! Central finite-difference checks against the recorded backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Session, Tensor, Var};

/// Relative error with an absolute floor on the denominator, so entries
/// whose true derivative is zero are judged on absolute error.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    pub floor: f64,
    /// Check at most this many entries per tensor (sampled with a fixed
    /// seed); `None` checks every entry.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(flat index, analytic, numeric)` of the worst entry.
    pub worst: (usize, f64, f64),
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn entries(len: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    match opts.max_entries {
        Some(k) if k < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9e37_79b9));
            let mut idx = sample(&mut rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

fn compare(
    name: String,
    analytic: &[f64],
    idx: &[usize],
    mut numeric: impl FnMut(usize) -> Result<f64>,
    floor: f64,
) -> Result<GradReport> {
    let mut report = GradReport {
        name,
        checked: 0,
        max_rel_err: 0.0,
        worst: (0, 0.0, 0.0),
    };
    for &i in idx {
        let n = numeric(i)?;
        let e = rel_err(analytic[i], n, floor);
        report.checked += 1;
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = (i, analytic[i], n);
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar function of plain input tensors.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<Vec<GradReport>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let mut reports = Vec::new();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let idx = entries(inputs[k].len(), opts, k as u64);
        let report = compare(
            format!("input{k}"),
            analytic.data(),
            &idx,
            |i| {
                let mut ts = inputs.to_vec();
                ts[k].data_mut()[i] += opts.step;
                let up = eval(&ts)?;
                ts[k].data_mut()[i] -= 2.0 * opts.step;
                let down = eval(&ts)?;
                Ok((up - down) / (2.0 * opts.step))
            },
            opts.floor,
        )?;
        reports.push(report);
    }
    Ok(reports)
}

/// Checks the gradient of a scalar loss with respect to every trainable
/// parameter in `store`. The session runs in training mode; buffer updates
/// are discarded.
pub fn check_params<F>(store: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<Vec<GradReport>>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut sess = Session::new(s, true);
        let out = f(&mut sess)?;
        Ok(sess.graph.value(out).data()[0])
    };
    let mut sess = Session::new(store, true);
    let loss = f(&mut sess)?;
    let grads = sess.backward(loss)?;
    let mut analytic: Vec<Option<Tensor>> = vec![None; store.len()];
    for (id, gt) in grads {
        analytic[id.index()] = Some(gt);
    }
    let mut reports = Vec::new();
    let mut scratch = store.clone();
    for (id, p) in store.iter().filter(|(_, p)| p.trainable) {
        let a = analytic[id.index()]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let idx = entries(p.value.len(), opts, id.index() as u64);
        let report = compare(
            p.name.clone(),
            a.data(),
            &idx,
            |i| {
                let orig = p.value.data()[i];
                perturb(&mut scratch, id, i, orig + opts.step);
                let up = eval(&scratch)?;
                perturb(&mut scratch, id, i, orig - opts.step);
                let down = eval(&scratch)?;
                perturb(&mut scratch, id, i, orig);
                Ok((up - down) / (2.0 * opts.step))
            },
            opts.floor,
        )?;
        reports.push(report);
    }
    Ok(reports)
}

fn perturb(store: &mut ParamStore, id: ParamId, i: usize, v: f64) {
    store.get_mut(id).value.data_mut()[i] = v;
}

/// Fixed random projection `Σ out ⊙ r`, which turns any tensor output into
/// a scalar with generic (non-degenerate) gradients.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::uniform(g.value(out).shape(), -1.0, 1.0, &mut rng);
    let r = g.constant(r);
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0, 1e-6), 0.0);
        assert!((rel_err(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((rel_err(0.0, 1e-8, 1e-6) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn detects_wrong_gradient() {
        // Square via mul is right; a mis-scaled custom rule would be caught.
        let x = Tensor::new(&[3], vec![0.3, -0.7, 1.1]).unwrap();
        let reps = check_inputs(
            &[x],
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(reps[0].passes(1e-8), "{reps:?}");
    }
}
