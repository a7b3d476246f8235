//! Configured Monte-Carlo experiments on top of `homlab-core`, with CSV/JSON persistence.

pub mod config;
pub mod experiments;
pub mod output;

pub use homlab_core::fit::{fit_rate, RateFit, RateModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MuError {
    #[error("the logarithmic factor is defined for d >= 2, got d = {0}")]
    Dimension(usize),
    #[error("the logarithmic factor needs L >= 2, got L = {0}")]
    Side(usize),
}

/// `ln L` in two dimensions, `1` above.
pub fn mu_d(dim: usize, side: usize) -> Result<f64, MuError> {
    if dim < 2 {
        return Err(MuError::Dimension(dim));
    }
    if side < 2 {
        return Err(MuError::Side(side));
    }
    Ok(if dim == 2 { (side as f64).ln() } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_factor() {
        assert!((mu_d(2, 8).unwrap() - 2.0794415416798357).abs() < 1e-15);
        assert_eq!(mu_d(3, 8).unwrap(), 1.0);
        assert_eq!(mu_d(4, 100).unwrap(), 1.0);
        assert_eq!(mu_d(2, 2).unwrap(), std::f64::consts::LN_2);
        assert_eq!(mu_d(1, 8), Err(MuError::Dimension(1)));
        assert_eq!(mu_d(2, 1), Err(MuError::Side(1)));
    }
}
