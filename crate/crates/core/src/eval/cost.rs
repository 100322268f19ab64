//! Performance-per-cost comparison between two systems.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CostError {
    #[error("undefined efficiency: both systems cost {0}")]
    Undefined(f64),
}

/// Performance points gained per unit of cost saved.
pub fn cost_efficiency(p_ours: f64, p_base: f64, c_ours: f64, c_base: f64) -> Result<f64, CostError> {
    if c_base == c_ours {
        return Err(CostError::Undefined(c_ours));
    }
    Ok((p_ours - p_base) / (c_base - c_ours))
}

/// Inputs for the cost section of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostInputs {
    pub p_ours: f64,
    pub p_base: f64,
    pub c_ours: f64,
    pub c_base: f64,
}

impl CostInputs {
    pub fn efficiency(&self) -> Result<f64, CostError> {
        cost_efficiency(self.p_ours, self.p_base, self.c_ours, self.c_base)
    }
}

impl std::str::FromStr for CostInputs {
    type Err = String;

    /// Four comma-separated numbers: p_ours,p_base,c_ours,c_base.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad cost value {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match v.as_slice() {
            [p_ours, p_base, c_ours, c_base] => Ok(Self {
                p_ours: *p_ours,
                p_base: *p_base,
                c_ours: *c_ours,
                c_base: *c_base,
            }),
            _ => Err(format!("expected 4 comma-separated values, got {}", v.len())),
        }
    }
}
