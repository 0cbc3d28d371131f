//! Central finite-difference validation of tape gradients.

use super::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks every coordinate.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

fn eval<F>(f: &F, point: &[Array]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite function value {v}")));
    }
    Ok(v)
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error over every coordinate of every input.
pub fn grad_check<F>(f: F, point: &[Array], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let opts = GradCheckOptions {
        eps,
        ..Default::default()
    };
    Ok(grad_check_with(f, point, &opts)?.max_rel_error)
}

pub fn grad_check_with<F>(f: F, point: &[Array], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Array> = vars.iter().map(|&v| grads.get_or_zeros(v, &tape)).collect();
    if let Some(bad) = analytic.iter().find(|g| !g.all_finite()) {
        return Err(Error::Numeric(format!("non-finite analytic gradient of shape {:?}", bad.shape())));
    }

    let root = SeedStream::new(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe = point.to_vec();
    for (input, base) in point.iter().enumerate() {
        let coords = match opts.max_coords_per_input {
            Some(k) if k < base.len() => {
                let mut c = root.split(input as u64).sample_indices(base.len(), k);
                c.sort_unstable();
                c
            }
            _ => (0..base.len()).collect(),
        };
        for coord in coords {
            let x0 = base.data()[coord];
            probe[input].data_mut()[coord] = x0 + opts.eps;
            let up = eval(&f, &probe)?;
            probe[input].data_mut()[coord] = x0 - opts.eps;
            let down = eval(&f, &probe)?;
            probe[input].data_mut()[coord] = x0;
            let numeric = (up - down) / (2.0 * opts.eps);
            let err = relative_error(analytic[input].data()[coord], numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((input, coord));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(
            |t, v| t.mul(v[0], v[0]),
            &[Array::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let r = grad_check(
            |t, v| {
                let y = t.scale(v[0], 1e308);
                let y = t.scale(y, 1e308);
                Ok(t.sum(y))
            },
            &[Array::scalar(1.0)],
            1e-5,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
