//! Uniform time grid shared by every time-dependent quantity.
//!
//! Integrators in this crate are classical RK4, which needs inputs at the
//! nodes and at the interval midpoints. Time-varying data are therefore sampled
//! on the *half-step* lattice `s = 0..=2K`, `t_s = s·Δt/2`: even samples are
//! grid nodes, odd samples are midpoints.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::invalid(
                "t_final",
                format!("must be positive, got {t_final}"),
            ));
        }
        if steps == 0 {
            return Err(Error::invalid("steps", "grid needs at least one step"));
        }
        Ok(Self { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Number of intervals `K`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes `K + 1`.
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    /// Number of half-step samples `2K + 1`.
    pub fn half_samples(&self) -> usize {
        2 * self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn time(&self, node: usize) -> f64 {
        if node == self.steps {
            self.t_final
        } else {
            node as f64 * self.dt()
        }
    }

    pub fn half_time(&self, sample: usize) -> f64 {
        if sample == 2 * self.steps {
            self.t_final
        } else {
            sample as f64 * 0.5 * self.dt()
        }
    }

    /// Trapezoid weight of node `k`.
    pub fn trapezoid_weight(&self, node: usize) -> f64 {
        if node == 0 || node == self.steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    /// Index of the node closest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        (k.max(0.0) as usize).min(self.steps)
    }
}
