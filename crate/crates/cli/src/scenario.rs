//! Scenario file schema and its mapping onto the core types.
//!
//! Scenarios are JSON with sections `model`, `formulation`, `integrator`,
//! `run`, `outputs`, and `compare`. Unknown keys are rejected so that typos
//! fail fast instead of silently running with defaults.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use hybrid_sens_core::formulations::{AlphaSpec, Formulation, PenaltyConfig};
use hybrid_sens_core::integrator::IntegratorConfig;
use hybrid_sens_core::model::complex::ComplexDynamics;
use hybrid_sens_core::models::{
    BallCost, BouncingBall, FiveBar, FiveBarConfig, FiveBarCost, Pendulum, SpringAnchor,
};
use nalgebra::DVector;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct Scenario {
    pub model: ModelSection,
    #[serde(default)]
    pub formulation: FormulationSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    pub run: RunSection,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default)]
    pub compare: CompareSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ModelSection {
    BouncingBall(BallSection),
    FiveBar(FiveBarSection),
    Pendulum(PendulumSection),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BallSection {
    pub h0: f64,
    pub gravity: f64,
    pub restitution: f64,
    pub cost: String,
}

impl Default for BallSection {
    fn default() -> Self {
        Self {
            h0: 1.0,
            gravity: 9.81,
            restitution: 1.0,
            cost: "none".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FiveBarSection {
    pub masses: [f64; 4],
    pub stiffness: [f64; 2],
    pub natural_lengths: [f64; 2],
    pub bar_lengths: [f64; 4],
    pub anchor_a: [f64; 2],
    pub anchor_b: [f64; 2],
    /// Spring attachments: anchor ("a" or "b") and moving point index 1..=3.
    pub spring_1: (String, usize),
    pub spring_2: (String, usize),
    pub ground_height: f64,
    pub gravity: f64,
    pub restitution: f64,
    pub initial_q: [f64; 6],
    pub initial_v: [f64; 6],
    pub cost: String,
}

impl Default for FiveBarSection {
    fn default() -> Self {
        let c = FiveBarConfig::default();
        Self {
            masses: c.masses,
            stiffness: c.stiffness,
            natural_lengths: c.natural_lengths,
            bar_lengths: c.bar_lengths,
            anchor_a: c.anchor_a,
            anchor_b: c.anchor_b,
            spring_1: ("a".into(), 3),
            spring_2: ("b".into(), 2),
            ground_height: c.ground_height,
            gravity: c.gravity,
            restitution: c.restitution,
            initial_q: c.initial_q,
            initial_v: c.initial_v,
            cost: "none".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumSection {
    pub mass: f64,
    pub gravity: f64,
    pub length: f64,
    pub theta0: f64,
    pub omega0: f64,
}

impl Default for PendulumSection {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            length: 1.0,
            theta0: 0.8,
            omega0: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum FormulationSection {
    Ode,
    DaeIndex1,
    Penalty(PenaltySection),
}

impl Default for FormulationSection {
    fn default() -> Self {
        FormulationSection::Penalty(PenaltySection::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub alpha: f64,
    pub xi: f64,
    pub omega: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            alpha: 1e7,
            xi: 1.0,
            omega: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step size; unbounded when absent.
    pub max_step: Option<f64>,
    pub event_tol: f64,
    pub dense_sample_dt: f64,
    pub max_events: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let c = IntegratorConfig::default();
        Self {
            rtol: c.rtol,
            atol: c.atol,
            max_step: None,
            event_tol: c.event_tol,
            dense_sample_dt: c.dense_sample_dt,
            max_events: c.max_events,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub t0: f64,
    pub tf: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { t0: 0.0, tf: 5.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub trajectory: bool,
    pub events: bool,
    /// Append the multiplier columns (lambda or its estimate) to the CSV.
    pub multipliers: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            trajectory: true,
            events: true,
            multipliers: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// "fd" or "complex".
    pub method: String,
    /// Perturbation size; method-specific default when absent.
    pub eps: Option<f64>,
    /// Pass/fail threshold on the max relative error; method-specific default.
    pub threshold: Option<f64>,
    /// Event exclusion half-width in units of `eps * |dt_eve/drho|`.
    pub exclusion_scale: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            method: "fd".into(),
            eps: None,
            threshold: None,
            exclusion_scale: 5.0,
        }
    }
}

/// A fully-built model with its nominal parameters and parameter names.
#[allow(clippy::large_enum_variant)]
pub enum BuiltModel {
    Ball(BouncingBall),
    FiveBar(FiveBar),
    Pendulum(Pendulum),
}

impl BuiltModel {
    pub fn as_model(&self) -> &dyn hybrid_sens_core::model::Model {
        match self {
            BuiltModel::Ball(m) => m,
            BuiltModel::FiveBar(m) => m,
            BuiltModel::Pendulum(m) => m,
        }
    }

    pub fn as_complex(&self) -> &dyn ComplexDynamics {
        match self {
            BuiltModel::Ball(m) => m,
            BuiltModel::FiveBar(m) => m,
            BuiltModel::Pendulum(m) => m,
        }
    }

    pub fn nominal_parameters(&self) -> DVector<f64> {
        match self {
            BuiltModel::Ball(m) => m.nominal_parameters(),
            BuiltModel::FiveBar(m) => m.nominal_parameters(),
            BuiltModel::Pendulum(m) => m.nominal_parameters(),
        }
    }

    pub fn parameter_names(&self) -> Vec<&'static str> {
        match self {
            BuiltModel::Ball(_) => vec!["h0"],
            BuiltModel::FiveBar(_) => vec!["L01", "L02"],
            BuiltModel::Pendulum(_) => vec!["L"],
        }
    }
}

fn anchor_from(label: &str) -> Result<SpringAnchor> {
    match label {
        "a" | "A" => Ok(SpringAnchor::A),
        "b" | "B" => Ok(SpringAnchor::B),
        other => bail!("unknown spring anchor {other:?} (expected \"a\" or \"b\")"),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let scn: Scenario = serde_json::from_str(text).context("scenario file does not parse")?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.tf.partial_cmp(&self.run.t0) != Some(std::cmp::Ordering::Greater) {
            bail!("run.tf must exceed run.t0");
        }
        match self.compare.method.as_str() {
            "fd" | "complex" => {}
            other => bail!("compare.method must be \"fd\" or \"complex\", got {other:?}"),
        }
        self.integrator_config()?.validate()?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<BuiltModel> {
        match &self.model {
            ModelSection::BouncingBall(b) => {
                let cost = match b.cost.as_str() {
                    "none" => BallCost::None,
                    "velocity" => BallCost::Velocity,
                    "accel" => BallCost::Accel,
                    other => bail!("unknown ball cost {other:?}"),
                };
                Ok(BuiltModel::Ball(
                    BouncingBall::new(b.h0, b.gravity, b.restitution).with_cost(cost),
                ))
            }
            ModelSection::FiveBar(f) => {
                let cost = match f.cost.as_str() {
                    "none" => FiveBarCost::None,
                    "vertical_velocity_p2" => FiveBarCost::VerticalVelocityP2,
                    "vertical_accel_p2" => FiveBarCost::VerticalAccelP2,
                    other => bail!("unknown five-bar cost {other:?}"),
                };
                let cfg = FiveBarConfig {
                    masses: f.masses,
                    stiffness: f.stiffness,
                    natural_lengths: f.natural_lengths,
                    bar_lengths: f.bar_lengths,
                    anchor_a: f.anchor_a,
                    anchor_b: f.anchor_b,
                    spring_1: (anchor_from(&f.spring_1.0)?, f.spring_1.1),
                    spring_2: (anchor_from(&f.spring_2.0)?, f.spring_2.1),
                    ground_height: f.ground_height,
                    gravity: f.gravity,
                    restitution: f.restitution,
                    initial_q: f.initial_q,
                    initial_v: f.initial_v,
                    cost,
                };
                Ok(BuiltModel::FiveBar(
                    FiveBar::new(cfg).map_err(|e| anyhow!("five-bar configuration: {e}"))?,
                ))
            }
            ModelSection::Pendulum(p) => Ok(BuiltModel::Pendulum(Pendulum::new(
                p.mass, p.gravity, p.length, p.theta0, p.omega0,
            ))),
        }
    }

    pub fn formulation(&self) -> Formulation {
        match &self.formulation {
            FormulationSection::Ode => Formulation::Ode,
            FormulationSection::DaeIndex1 => Formulation::DaeIndex1,
            FormulationSection::Penalty(p) => Formulation::Penalty(PenaltyConfig {
                alpha: AlphaSpec::Uniform(p.alpha),
                xi: p.xi,
                omega: p.omega,
            }),
        }
    }

    pub fn integrator_config(&self) -> Result<IntegratorConfig> {
        let s = &self.integrator;
        Ok(IntegratorConfig {
            rtol: s.rtol,
            atol: s.atol,
            max_step: s.max_step.unwrap_or(f64::INFINITY),
            event_tol: s.event_tol,
            dense_sample_dt: s.dense_sample_dt,
            max_events: s.max_events,
            extra_sample_times: Vec::new(),
        })
    }

    /// Default scenario for a named model kind.
    pub fn defaults_for(kind: &str) -> Result<Self> {
        let model = match kind {
            "bouncing_ball" | "ball" => ModelSection::BouncingBall(BallSection::default()),
            "five_bar" | "fivebar" => ModelSection::FiveBar(FiveBarSection::default()),
            "pendulum" => ModelSection::Pendulum(PendulumSection::default()),
            other => bail!("unknown model kind {other:?} (expected bouncing_ball, five_bar, or pendulum)"),
        };
        let formulation = match &model {
            ModelSection::BouncingBall(_) => FormulationSection::Ode,
            _ => FormulationSection::default(),
        };
        let run = match &model {
            ModelSection::BouncingBall(_) => RunSection { t0: 0.0, tf: 1.0 },
            _ => RunSection::default(),
        };
        Ok(Scenario {
            model,
            formulation,
            integrator: IntegratorSection::default(),
            run,
            outputs: OutputSection::default(),
            compare: CompareSection::default(),
        })
    }

    /// Apply a `name=value` override to the runtime parameter vector.
    pub fn apply_param_override(
        built: &BuiltModel,
        rho: &mut DVector<f64>,
        spec: &str,
    ) -> Result<()> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("parameter override must be name=value, got {spec:?}"))?;
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("parameter override value in {spec:?}"))?;
        let names = built.parameter_names();
        let idx = names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| anyhow!("unknown parameter {name:?}; expected one of {names:?}"))?;
        rho[idx] = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        for kind in ["bouncing_ball", "five_bar", "pendulum"] {
            let scn = Scenario::defaults_for(kind).unwrap();
            let text = scn.to_json();
            let back = Scenario::parse(&text).unwrap();
            assert_eq!(back, scn);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&Scenario::defaults_for("ball").unwrap().to_json()).unwrap();
        v["integrator"]["rtool"] = serde_json::json!(1e-8);
        let err = Scenario::parse(&v.to_string()).unwrap_err();
        assert!(format!("{err:#}").contains("rtool"), "{err:#}");
    }
}
