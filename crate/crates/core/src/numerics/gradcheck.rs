use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Var};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Probes discarded because `x ± eps` crossed a ReLU kink.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tol
    }
}

fn evaluate<F>(f: &F, store: &ParamStore) -> Result<(f64, u64)>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::invalid("grad_check needs a scalar-valued function"));
    }
    Ok((v.item(), g.kink_signature()))
}

/// Compares taped gradients with central differences
/// `(f(x+eps) − f(x−eps)) / 2eps`.
///
/// When the store holds at most `probes` scalars every coordinate is checked;
/// otherwise `probes` coordinates are sampled (parameter uniformly, then
/// element uniformly). A probe whose perturbed evaluations land on a
/// different ReLU pattern than the base point is not differentiable there
/// and is replaced by a fresh sample.
pub fn grad_check<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a ParamStore) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        g.gradients(loss)?
    };
    let (_, base_sig) = evaluate(&f, store)?;

    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let total = store.num_scalars();
    let coords: Vec<(ParamId, usize)> = if total <= probes {
        ids.iter()
            .flat_map(|&id| (0..store.value(id).len()).map(move |i| (id, i)))
            .collect()
    } else {
        Vec::new()
    };
    let exhaustive = !coords.is_empty();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut attempts = 0;
    let target = if exhaustive { coords.len() } else { probes };
    let max_attempts = target * 4 + 16;
    while report.checked < target && attempts < max_attempts {
        let (id, idx) = if exhaustive {
            coords[attempts]
        } else {
            let id = ids[rng.gen_range(0..ids.len())];
            (id, rng.gen_range(0..store.value(id).len()))
        };
        attempts += 1;
        let x0 = store.value(id).data()[idx];
        work.get_mut(id).value.data_mut()[idx] = x0 + eps;
        let (fp, sig_p) = evaluate(&f, &work)?;
        work.get_mut(id).value.data_mut()[idx] = x0 - eps;
        let (fm, sig_m) = evaluate(&f, &work)?;
        work.get_mut(id).value.data_mut()[idx] = x0;
        if sig_p != base_sig || sig_m != base_sig {
            report.skipped_kinks += 1;
            if exhaustive && attempts >= coords.len() {
                break;
            }
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[idx]);
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((store.get(id).name.clone(), idx));
            }
        }
        report.checked += 1;
        if exhaustive && attempts >= coords.len() {
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn square_is_tight() {
        let mut store = ParamStore::new();
        let p = store.add("x", Tensor::scalar(3.0)).unwrap();
        let r = grad_check(
            &store,
            |g, s| {
                let v = g.param(s, p);
                g.mul(v, v)
            },
            1e-5,
            10,
            0,
        )
        .unwrap();
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn softmax_pick_component() {
        let mut store = ParamStore::new();
        let p = store
            .add("x", Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap())
            .unwrap();
        let pick = Tensor::new(&[4], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let r = grad_check(
            &store,
            |g, s| {
                let v = g.param(s, p);
                let sm = g.softmax(v, 0)?;
                let mask = g.constant(pick.clone());
                let picked = g.mul(sm, mask)?;
                Ok(g.sum(picked))
            },
            1e-5,
            100,
            1,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
