//! Central-difference verification of tape gradients.

use thiserror::Error;

use super::{Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("step {0} outside [1e-6, 1e-4]")]
    BadStep(f64),
    #[error("loss is not finite at the base point")]
    NonFiniteBase,
    #[error("loss is not finite when perturbing scalar {index} ({name}[{offset}])")]
    NonFinite {
        index: usize,
        name: String,
        offset: usize,
    },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over scalars of `|ga - gf| / max(1, |ga|, |gf|)`.
    pub max_rel_error: f64,
    /// Flat scalar index where the max was attained.
    pub worst_index: usize,
    pub worst_name: String,
    pub analytic: Vec<Matrix>,
    pub checked: usize,
}

/// Compares the tape gradient of `loss` against central differences for every
/// scalar in `store`.
///
/// `loss` builds the forward pass on a fresh tape, binding parameters via
/// [`Tape::param`], and returns the scalar loss node.
pub fn grad_check<F>(
    store: &ParamStore,
    eps: f64,
    loss: F,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&ParamStore, &mut Tape) -> Var,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(GradCheckError::BadStep(eps));
    }
    let mut tape = Tape::new();
    let out = loss(store, &mut tape);
    if !tape.scalar(out).is_finite() {
        return Err(GradCheckError::NonFiniteBase);
    }
    let grads = tape.backward(out);
    let analytic = tape.param_grads(store, &grads);

    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let v = loss(s, &mut t);
        t.scalar(v)
    };

    let mut work = store.clone();
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    let mut worst_name = String::new();
    for (index, (id, offset)) in store.scalar_index().into_iter().enumerate() {
        let orig = store.get(id).as_slice()[offset];
        let set = |w: &mut ParamStore, v: f64| w.get_mut(id).as_mut_slice()[offset] = v;
        set(&mut work, orig + eps);
        let plus = eval(&work);
        set(&mut work, orig - eps);
        let minus = eval(&work);
        set(&mut work, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GradCheckError::NonFinite {
                index,
                name: store.name(id).to_string(),
                offset,
            });
        }
        let gf = (plus - minus) / (2.0 * eps);
        let ga = analytic[id.0].as_slice()[offset];
        let rel = (ga - gf).abs() / 1f64.max(ga.abs()).max(gf.abs());
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = index;
            worst_name = format!("{}[{offset}]", store.name(id));
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        worst_name,
        checked: store.scalar_count(),
        analytic,
    })
}

/// Convenience for tests: a store with one parameter per given matrix.
pub fn store_of(mats: impl IntoIterator<Item = Matrix>) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = mats
        .into_iter()
        .enumerate()
        .map(|(i, m)| store.add(format!("p{i}"), m))
        .collect();
    (store, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.uniform_range(-1.0, 1.0))
    }

    fn check<F>(store: &ParamStore, f: F) -> f64
    where
        F: Fn(&ParamStore, &mut Tape) -> Var,
    {
        grad_check(store, 1e-5, f).unwrap().max_rel_error
    }

    #[test]
    fn quadratic() {
        let (store, ids) = store_of([Matrix::from_vec(1, 4, vec![0.3, -1.2, 2.5, 0.0])]);
        let err = check(&store, |s, t| {
            let p = t.param(s, ids[0]);
            let sq = t.mul(p, p);
            t.sum(sq)
        });
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn stationary_point() {
        let (store, ids) = store_of([Matrix::zeros(1, 3)]);
        let report = grad_check(&store, 1e-5, |s, t| {
            let p = t.param(s, ids[0]);
            let sq = t.mul(p, p);
            t.sum(sq)
        })
        .unwrap();
        assert!(report.analytic[0]
            .as_slice()
            .iter()
            .all(|g| g.abs() < 1e-12));
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn rejects_bad_step() {
        let (store, _) = store_of([Matrix::zeros(1, 1)]);
        let err = grad_check(&store, 1e-2, |_, t| t.constant(Matrix::zeros(1, 1)));
        assert_eq!(err.unwrap_err(), GradCheckError::BadStep(1e-2));
    }

    #[test]
    fn reports_non_finite_index() {
        let (store, ids) = store_of([Matrix::from_vec(1, 2, vec![0.0, 1.0])]);
        // log(0) blows up only when the first scalar is pushed below 0 through ln
        let err = grad_check(&store, 1e-5, |s, t| {
            let p = t.param(s, ids[0]);
            let v = t.value(p).clone();
            let weird = if v.as_slice()[0] < 0.0 { f64::NAN } else { 0.0 };
            let c = t.constant(Matrix::filled(1, 2, weird));
            let m = t.mul(p, c);
            t.sum(m)
        })
        .unwrap_err();
        assert!(matches!(err, GradCheckError::NonFinite { index: 0, .. }));
    }

    #[test]
    fn every_model_op() {
        let mut rng = Rng::new(99);
        for _ in 0..5 {
            let (store, ids) = store_of([
                random(&mut rng, 3, 4),
                random(&mut rng, 4, 5),
                random(&mut rng, 1, 5),
                random(&mut rng, 1, 5),
                random(&mut rng, 3, 5),
            ]);
            let targets = vec![1usize, 4, 2];
            let coords = random(&mut rng, 3, 2);
            let err = check(&store, |s, t| {
                let a = t.param(s, ids[0]);
                let b = t.param(s, ids[1]);
                let gain = t.param(s, ids[2]);
                let bias = t.param(s, ids[3]);
                let other = t.param(s, ids[4]);
                let x = t.matmul(a, b);
                let x = t.add_row(x, bias);
                let r = t.relu(x);
                let th = t.tanh(other);
                let sg = t.sigmoid(x);
                let m = t.mul(th, sg);
                let m = t.add(m, r);
                let ln = t.layer_norm(m, gain, bias, 1e-5);
                let mr = t.mul_row(ln, gain);
                let att = t.matmul_t(mr, other);
                let mask = [false, true, false, false, false, false, true, false, false];
                let att = t.masked_fill(att, &mask, -1e9);
                let sm = t.softmax_rows(att);
                let ctx = t.matmul(sm, other);
                let cat = t.concat_cols(&[ctx, mr]);
                let sel = t.select_rows(cat, &[Some(2), None, Some(0)]);
                let logits = t.scale(sel, 0.7);
                let ce = t.cross_entropy_sum(logits, &targets);
                let head = t.select_rows(ctx, &[Some(0), Some(1), Some(2)]);
                let nll = t.bvn_nll_sum(head, &coords);
                let l = t.add(ce, nll);
                t.scale(l, 0.5)
            });
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn bvn_nll_op_matches_scalar_formula() {
        use crate::numerics::{bvn_nll, GaussianParams};
        let raw = Matrix::from_vec(
            2,
            5,
            vec![0.1, -0.3, 0.2, -0.4, 0.6, 1.0, 0.0, 0.0, 0.0, -0.2],
        );
        let target = Matrix::from_vec(2, 2, vec![0.5, 0.2, -1.0, 0.7]);
        let mut t = Tape::new();
        let r = t.constant(raw.clone());
        let s = t.bvn_nll_sum(r, &target);
        let want: f64 = (0..2)
            .map(|i| {
                let g = GaussianParams::from_raw(raw.row(i));
                bvn_nll(target[(i, 0)], target[(i, 1)], &g)
            })
            .sum();
        assert!((t.scalar(s) - want).abs() < 1e-12);
    }
}
