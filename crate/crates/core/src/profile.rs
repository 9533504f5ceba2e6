//! Initial cell-density profiles.
//!
//! Every profile must sample to nonnegative values with positive total mass;
//! `sample` enforces both so a run can assume admissible data from step zero.

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::geometry::{integrate, Domain, Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum InitialProfile {
    Constant { value: f64 },
    /// `base + amp * cos(k pi (x - a)/L)` along the first axis.
    CosineBump { base: f64, amp: f64 },
    /// `base + amp * exp(-((x - center)/width)^2)` along the first axis,
    /// centered in the domain when `center` is absent. A negative `amp`
    /// carves a density well; the base level must cover the well depth.
    GaussianBump {
        base: f64,
        amp: f64,
        width: f64,
        #[serde(default)]
        center: Option<f64>,
    },
    /// Radial Gaussian concentrated at the origin of a ball.
    RadialSpike { base: f64, amp: f64, width: f64 },
}

impl InitialProfile {
    pub fn sample(&self, grid: &Grid) -> Result<Field> {
        self.validate(&grid.domain)?;
        let field = match *self {
            InitialProfile::Constant { value } => Field::constant(grid, value),
            InitialProfile::CosineBump { base, amp } => {
                let (a, len) = first_axis_range(&grid.domain);
                Field::new(grid, |x| base + amp * (std::f64::consts::PI * (x[0] - a) / len).cos())
            }
            InitialProfile::GaussianBump { base, amp, width, center } => {
                let (a, len) = first_axis_range(&grid.domain);
                let c = center.unwrap_or(a + 0.5 * len);
                Field::new(grid, |x| base + amp * (-((x[0] - c) / width).powi(2)).exp())
            }
            InitialProfile::RadialSpike { base, amp, width } => {
                Field::new(grid, |x| base + amp * (-(x[0] / width).powi(2)).exp())
            }
        };
        if let Some((cell, &value)) = field.values().iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(KsError::InvalidParameter(format!(
                "initial profile is negative at cell {cell}: {value:.3e}"
            )));
        }
        if integrate(grid, &field) <= 0.0 {
            return Err(KsError::InvalidParameter(
                "initial profile carries no mass".into(),
            ));
        }
        Ok(field)
    }

    fn validate(&self, domain: &Domain) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let ok = match *self {
            InitialProfile::Constant { value } => value.is_finite() && value > 0.0,
            InitialProfile::CosineBump { base, amp } => {
                finite(&[base, amp]) && base >= amp.abs()
            }
            InitialProfile::GaussianBump { base, amp, width, center } => {
                finite(&[base, amp, width, center.unwrap_or(0.0)])
                    && base >= 0.0
                    && base + amp.min(0.0) >= 0.0
                    && width > 0.0
            }
            InitialProfile::RadialSpike { base, amp, width } => {
                finite(&[base, amp, width]) && base >= 0.0 && amp >= 0.0 && width > 0.0
            }
        };
        if !ok {
            return Err(KsError::InvalidParameter(format!(
                "inadmissible initial profile {self:?}"
            )));
        }
        if matches!(self, InitialProfile::RadialSpike { .. })
            && !matches!(domain, Domain::RadialBall { .. })
        {
            return Err(KsError::InvalidParameter(
                "radial-spike profile needs a radial-ball domain".into(),
            ));
        }
        Ok(())
    }
}

fn first_axis_range(domain: &Domain) -> (f64, f64) {
    match *domain {
        Domain::Interval { a, b } => (a, b - a),
        Domain::Rectangle { ax, bx, .. } => (ax, bx - ax),
        Domain::RadialBall { radius, .. } => (0.0, radius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use std::f64::consts::PI;

    #[test]
    fn admissible_profiles_sample() {
        let grid = build_grid(&Domain::Interval { a: 0.0, b: PI }, &[32]).unwrap();
        for p in [
            InitialProfile::Constant { value: 2.0 },
            InitialProfile::CosineBump { base: 1.0, amp: 0.5 },
            InitialProfile::GaussianBump { base: 0.2, amp: 3.0, width: 0.3, center: None },
        ] {
            let f = p.sample(&grid).unwrap();
            assert!(f.min() >= 0.0);
            assert!(integrate(&grid, &f) > 0.0);
        }
    }

    #[test]
    fn gaussian_well_stays_nonnegative() {
        let grid = build_grid(&Domain::Interval { a: 0.0, b: PI }, &[64]).unwrap();
        let f = InitialProfile::GaussianBump { base: 1.0, amp: -0.8, width: 0.5, center: None }
            .sample(&grid)
            .unwrap();
        assert!(f.min() > 0.15 && f.min() < 0.25);
        assert!(f.max() <= 1.0);
        assert!(
            InitialProfile::GaussianBump { base: 1.0, amp: -1.1, width: 0.5, center: None }
                .sample(&grid)
                .is_err()
        );
    }

    #[test]
    fn inadmissible_profiles_are_rejected() {
        let grid = build_grid(&Domain::Interval { a: 0.0, b: PI }, &[32]).unwrap();
        assert!(InitialProfile::Constant { value: 0.0 }.sample(&grid).is_err());
        assert!(InitialProfile::CosineBump { base: 0.4, amp: 0.5 }.sample(&grid).is_err());
        assert!(InitialProfile::GaussianBump { base: 0.1, amp: 1.0, width: -1.0, center: None }
            .sample(&grid)
            .is_err());
        assert!(InitialProfile::RadialSpike { base: 0.1, amp: 1.0, width: 0.2 }
            .sample(&grid)
            .is_err());
    }

    #[test]
    fn radial_spike_on_ball() {
        let grid = build_grid(&Domain::RadialBall { radius: 1.0, dim: 3 }, &[48]).unwrap();
        let f = InitialProfile::RadialSpike { base: 0.1, amp: 50.0, width: 0.15 }
            .sample(&grid)
            .unwrap();
        assert!(f.values()[0] > 40.0);
        assert!(f.values()[47] < 0.2);
    }
}
