//! Norm-ball input regions `{x : ||x||_p <= eps}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Linf,
}

impl Norm {
    pub fn of(self, x: &[f64]) -> f64 {
        match self {
            Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Linf => x.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        }
    }

    /// Norm of the dual space: l2 is self-dual, l-inf pairs with l1.
    pub fn dual_of(self, x: &[f64]) -> f64 {
        match self {
            Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Linf => x.iter().map(|v| v.abs()).sum(),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L2 => write!(f, "2"),
            Norm::Linf => write!(f, "inf"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "infinity" => Ok(Norm::Linf),
            other => Err(Error::config(format!("unknown norm {other:?}, expected 2 or inf"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRegion {
    pub norm: Norm,
    pub eps: f64,
}

impl InputRegion {
    pub fn new(norm: Norm, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::config(format!("region radius must be positive, got {eps}")));
        }
        Ok(Self { norm, eps })
    }

    /// The inner-class safety region: the closed unit l2 ball.
    pub fn unit_l2() -> Self {
        Self {
            norm: Norm::L2,
            eps: 1.0,
        }
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.norm.of(x) <= self.eps + slack
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("inf".parse::<Norm>().unwrap(), Norm::Linf);
        assert_eq!("2".parse::<Norm>().unwrap(), Norm::L2);
        assert!("3".parse::<Norm>().is_err());
        assert_eq!(Norm::Linf.to_string(), "inf");
    }

    #[test]
    fn rejects_nonpositive_radius() {
        assert!(InputRegion::new(Norm::L2, 0.0).is_err());
        assert!(InputRegion::new(Norm::L2, f64::NAN).is_err());
    }

    #[test]
    fn norms() {
        let x = [3.0, -4.0];
        assert_eq!(Norm::L2.of(&x), 5.0);
        assert_eq!(Norm::Linf.of(&x), 4.0);
        assert_eq!(Norm::Linf.dual_of(&x), 7.0);
    }
}
