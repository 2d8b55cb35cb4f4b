//! Chi-squared tail probabilities.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// `P(X > x)` for `X` chi-squared with `dof` degrees of freedom.
pub fn chi_squared_sf(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::invalid(
            "chi-squared needs at least one degree of freedom",
        ));
    }
    if !(x >= 0.0) {
        return Err(Error::invalid(format!(
            "chi-squared argument must be >= 0, got {x}"
        )));
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.sf(x).clamp(0.0, 1.0))
}
