use super::mat::Mat;
use crate::error::{Error, Result};

/// Largest relative disagreement between `analytic` and central differences of `f` at `theta`.
///
/// Per coordinate: `|a - c| / max(1e-12, |a| + |c|)`.
pub fn grad_check<F>(mut f: F, theta: &[Mat], analytic: &[Mat], h: f64) -> Result<f64>
where
    F: FnMut(&[Mat]) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    if theta.len() != analytic.len() {
        return Err(Error::Shape {
            op: "grad_check",
            left: (theta.len(), 0),
            right: (analytic.len(), 0),
        });
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for (pi, g) in analytic.iter().enumerate() {
        if g.shape() != theta[pi].shape() {
            return Err(Error::Shape {
                op: "grad_check",
                left: theta[pi].shape(),
                right: g.shape(),
            });
        }
        for i in 0..g.len() {
            let orig = probe[pi].data()[i];
            probe[pi].data_mut()[i] = orig + h;
            let up = f(&probe)?;
            probe[pi].data_mut()[i] = orig - h;
            let down = f(&probe)?;
            probe[pi].data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite objective probing parameter {pi} entry {i}"
                )));
            }
            let numeric = (up - down) / (2.0 * h);
            let a = g.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
