//! The two-parameter experiments: bilinear model `E = (y − abx)²/2`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::config::{physical_time_steps, RunConfig, Stopping};
use crate::egr::{run_egr, EgrConfig};
use crate::error::{Error, Result};
use crate::flow::{exact_field, flow_trajectory, modified_field, run_gd, Trajectory};
use crate::model::{eval_loss, make_bilinear, Batch, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Preset {
    #[serde(rename = "point_I")]
    PointI,
    #[serde(rename = "point_II")]
    PointII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GdSmall,
    GdModerate,
    GdLarge,
    ExactFlow,
    ModifiedFlow,
    Egr,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::PointI, Preset::PointII];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::PointI => "point_I",
            Preset::PointII => "point_II",
        }
    }

    pub fn constants(self) -> PresetConstants {
        match self {
            Preset::PointI => PresetConstants {
                a0: 2.8,
                b0: 3.5,
                x: 1.0,
                y: 0.6,
                h_small: 1e-3,
                h_moderate: 2.5e-2,
                h_large: Some(1.8e-1),
                mu: 0.5,
                h_euler: 1e-4,
                horizon: 100.0,
            },
            Preset::PointII => PresetConstants {
                a0: 75.0,
                b0: 74.925,
                x: 1.0,
                y: 0.6,
                h_small: 1e-6,
                h_moderate: 0.5e-4,
                h_large: None,
                mu: 4.1e-2,
                h_euler: 5e-7,
                horizon: 10.0,
            },
        }
    }
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::GdSmall,
        Variant::GdModerate,
        Variant::GdLarge,
        Variant::ExactFlow,
        Variant::ModifiedFlow,
        Variant::Egr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GdSmall => "gd_small",
            Variant::GdModerate => "gd_moderate",
            Variant::GdLarge => "gd_large",
            Variant::ExactFlow => "exact_flow",
            Variant::ModifiedFlow => "modified_flow",
            Variant::Egr => "egr",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "point_i" | "i" => Ok(Preset::PointI),
            "point_ii" | "ii" => Ok(Preset::PointII),
            _ => Err(Error::invalid(format!("unknown preset {s:?} (point_I, point_II)"))),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown variant {s:?} (gd_small, gd_moderate, gd_large, exact_flow, modified_flow, egr)"
                ))
            })
    }
}

/// Hyper-parameters of one starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PresetConstants {
    pub a0: f64,
    pub b0: f64,
    pub x: f64,
    pub y: f64,
    pub h_small: f64,
    pub h_moderate: f64,
    /// Absent for point II.
    pub h_large: Option<f64>,
    /// Coefficient of `E(1 + μ(a² + b²)x²)`.
    pub mu: f64,
    /// Reference integrator step for the flows and the EGR inner step.
    pub h_euler: f64,
    /// Physical time every variant runs to.
    pub horizon: f64,
}

impl PresetConstants {
    pub fn theta0(&self) -> ParamVector {
        ParamVector::new(vec![self.a0, self.b0]).expect("finite constants")
    }

    /// Coefficient passed to the `E + μ‖∇E‖²` objective. With a single point
    /// `‖∇E‖² = 2(a² + b²)x²E`, so half the table value reproduces
    /// `E(1 + μ(a² + b²)x²)`.
    pub fn egr_mu(&self) -> f64 {
        self.mu / 2.0
    }
}

/// Held-out point used for the two-parameter test error.
pub const TEST_POINT: (f64, f64) = (0.5, 0.6);

/// Snapshot cadence that keeps roughly `target` rows.
fn cadence(steps: usize, target: usize) -> usize {
    (steps / target).max(1)
}

const ROWS_PER_RUN: usize = 1000;

/// Runs one variant up to the preset's horizon.
pub fn run_preset_2d(preset: Preset, variant: Variant) -> Result<Trajectory> {
    run_preset_2d_until(preset, variant, preset.constants().horizon)
}

/// Runs one variant up to physical time `horizon`.
pub fn run_preset_2d_until(preset: Preset, variant: Variant, horizon: f64) -> Result<Trajectory> {
    let c = preset.constants();
    let model = make_bilinear(c.x, c.y)?;
    let batch = model.train_batch();
    let theta0 = c.theta0();
    let gd = |h: f64| -> Result<Trajectory> {
        let steps = physical_time_steps(h, horizon)?;
        let cfg = RunConfig::new(h, steps)
            .with_stopping(Stopping::FixedPhysicalTime { time: horizon })
            .with_eval_every(cadence(steps, ROWS_PER_RUN));
        run_gd(&model, &theta0, &batch, &cfg)
    };
    // a zero horizon is allowed for the flows: one row at t = 0
    let flow_steps = if horizon == 0.0 {
        0
    } else {
        physical_time_steps(c.h_moderate, horizon)?
    };
    let flow_every = cadence(flow_steps, ROWS_PER_RUN);
    match variant {
        Variant::GdSmall => gd(c.h_small),
        Variant::GdModerate => gd(c.h_moderate),
        Variant::GdLarge => match c.h_large {
            Some(h) => gd(h),
            None => Err(Error::invalid(format!("{preset} has no {variant} variant"))),
        },
        Variant::ExactFlow => flow_trajectory(
            &exact_field(&model, &batch),
            &model,
            &batch,
            &theta0,
            c.h_moderate,
            flow_steps,
            flow_every,
            c.h_euler,
        ),
        Variant::ModifiedFlow => flow_trajectory(
            &modified_field(&model, &batch, c.h_moderate)?,
            &model,
            &batch,
            &theta0,
            c.h_moderate,
            flow_steps,
            flow_every,
            c.h_euler,
        ),
        Variant::Egr => {
            let steps = physical_time_steps(c.h_euler, horizon)?;
            let run = RunConfig::new(c.h_euler, steps).with_eval_every(cadence(steps, ROWS_PER_RUN));
            run_egr(&model, &theta0, &batch, &EgrConfig::new(c.egr_mu(), run))
        }
    }
}

/// Loss at [`TEST_POINT`] for the given parameters.
pub fn held_out_loss(theta: &ParamVector) -> Result<f64> {
    let model = make_bilinear(TEST_POINT.0, TEST_POINT.1)?;
    eval_loss(&model, theta, &Batch::point(TEST_POINT.0, TEST_POINT.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Termination;

    #[test]
    fn table_constants() {
        let c = Preset::PointI.constants();
        assert_eq!((c.a0, c.b0, c.x, c.y), (2.8, 3.5, 1.0, 0.6));
        assert_eq!((c.h_small, c.h_moderate, c.h_large), (1e-3, 2.5e-2, Some(0.18)));
        assert_eq!((c.mu, c.h_euler), (0.5, 1e-4));
        let c = Preset::PointII.constants();
        assert_eq!((c.a0, c.b0), (75.0, 74.925));
        assert_eq!((c.h_small, c.h_moderate, c.h_large), (1e-6, 5e-5, None));
        assert_eq!((c.mu, c.h_euler), (4.1e-2, 5e-7));
    }

    #[test]
    fn egr_coefficient_reproduces_the_two_parameter_form() {
        use crate::egr::egr_value_grad;
        let c = Preset::PointI.constants();
        let m = make_bilinear(c.x, c.y).unwrap();
        let theta = ParamVector::new(vec![2.0, 1.0]).unwrap();
        let (v, _) = egr_value_grad(&m, &theta, c.egr_mu(), &m.train_batch()).unwrap();
        let e = 0.98;
        assert!((v - e * (1.0 + c.mu * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn names_parse() {
        assert_eq!("point_I".parse::<Preset>().unwrap(), Preset::PointI);
        assert_eq!("point_ii".parse::<Preset>().unwrap(), Preset::PointII);
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("point_III".parse::<Preset>().is_err());
        assert!("gd_huge".parse::<Variant>().is_err());
    }

    #[test]
    fn point_two_has_no_large_step() {
        assert!(run_preset_2d(Preset::PointII, Variant::GdLarge).is_err());
    }

    #[test]
    fn short_horizon_flow_stays_near_start() {
        let t = run_preset_2d_until(Preset::PointI, Variant::ExactFlow, 0.0).unwrap();
        assert_eq!(t.final_params.as_slice(), &[2.8, 3.5]);
        assert_eq!(t.rows.len(), 1);
        // one grid step of the flow moves by about h·‖∇E‖
        let t = run_preset_2d_until(Preset::PointI, Variant::ExactFlow, 1e-9).unwrap();
        let moved = t.final_params.distance(&[2.8, 3.5]);
        assert!(moved > 0.5 && moved < 0.025 * 41.3, "{moved}");
    }

    #[test]
    fn moderate_run_starts_at_table_loss() {
        let t = run_preset_2d_until(Preset::PointI, Variant::GdModerate, 1.0).unwrap();
        assert_eq!(t.rows[0].iteration, 0);
        assert!((t.rows[0].loss - 42.32).abs() < 1e-12);
        assert_eq!(t.termination, Termination::StoppedByCriterion);
        assert_eq!(t.rows.last().unwrap().iteration, 40);
    }

    #[test]
    fn held_out_loss_at_training_minimum() {
        // ab = 0.6 fits (1, 0.6) but predicts 0.3 at x = 0.5
        let theta = ParamVector::new(vec![0.6, 1.0]).unwrap();
        assert!((held_out_loss(&theta).unwrap() - 0.045).abs() < 1e-12);
    }
}
