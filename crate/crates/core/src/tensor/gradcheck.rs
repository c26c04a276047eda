use super::{NodeId, Result, Tape, Tensor, TensorError};

/// Compares tape gradients with central differences.
///
/// `f` records a scalar loss on the given tape from parameter nodes bound in
/// the same order as `params`. Returns the largest
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)` over every
/// coordinate of every parameter.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[NodeId]) -> Result<NodeId>,
{
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &ids)?;
        tape.backward(loss)?;
        ids.iter().map(|id| tape.grad_or_zeros(*id)).collect()
    };

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &ids)?;
        let v = tape.value(loss);
        if v.shape() != [1, 1] {
            return Err(TensorError::NotScalar { shape: v.shape() });
        }
        Ok(v.data()[0])
    };

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[ci];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
