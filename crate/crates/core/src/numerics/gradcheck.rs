use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Tape, Tensor, Var};

/// Max over checked entries of `|analytic − central difference| / max(1, |central difference|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    grad_check_sampled(f, params, step, None, 0)
}

/// Like [`grad_check`], but checks at most `max_entries` coordinates per
/// parameter, chosen with `seed`.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor],
    step: f64,
    max_entries: Option<usize>,
    seed: u64,
) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(NumericsError::InvalidArgument(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |ps: &[Tensor]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(NumericsError::NotScalar(v.shape().to_vec()));
        }
        let v = v.item();
        if v.is_nan() {
            return Err(NumericsError::GradCheckNan);
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).data().iter().any(|v| v.is_nan()) {
        return Err(NumericsError::GradCheckNan);
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let entries: Vec<usize> = match max_entries {
            Some(m) if m < p.len() => {
                let mut idx = sample(&mut rng, p.len(), m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..p.len()).collect(),
        };
        for e in entries {
            let orig = p.data()[e];
            work[pi].data_mut()[e] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (analytic[pi].data()[e] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
