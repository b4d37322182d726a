//! Scenario catalog and configuration files: the two built-in calcium wave
//! experiments, TOML parsing/serialization with strict validation, and the
//! model wiring a configuration into the stepper.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::{
    flux_er, flux_plasma, phi_clamp, reaction, ClampSpec, FluxParams, InfluxPulse, ReactionParams,
};
use crate::gating::{ChannelState, RateConstants};
use crate::stepper::{
    BoundarySample, Diffusion, FieldState, Geometry, Model, SimError, Simulation, VolumeSample,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        message: String,
    },
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub r_inner: f64,
    pub r_outer: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub d_c: f64,
    pub d_e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_b: Option<f64>,
    pub flux: FluxParams,
    pub rates: RateConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction: Option<ReactionParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub u_e: f64,
    /// (c1, o, c2) channel fractions.
    pub gating: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: String,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Emit one time series row every this many steps.
    #[serde(default = "default_stride")]
    pub timeseries_stride: usize,
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_stride() -> usize {
    1
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
            snapshot_times: Vec::new(),
            timeseries_stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagsSection {
    pub clamp_enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp: Option<ClampSpec>,
    pub deterministic: bool,
}

impl Default for FlagsSection {
    fn default() -> Self {
        Self {
            clamp_enabled: false,
            clamp: None,
            deterministic: true,
        }
    }
}

/// Everything needed to run one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub geometry: GeometrySection,
    pub physics: PhysicsSection,
    pub initial: InitialSection,
    pub influx: InfluxPulse,
    pub numerics: NumericsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub flags: FlagsSection,
}

impl ScenarioConfig {
    pub fn has_buffer(&self) -> bool {
        self.physics.reaction.is_some()
    }

    pub fn n_steps(&self) -> usize {
        (self.numerics.t_end / self.numerics.dt).round() as usize
    }

    pub fn gating_state(&self) -> ChannelState {
        ChannelState::new(
            self.initial.gating[0],
            self.initial.gating[1],
            self.initial.gating[2],
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        if !(g.r_inner > 0.0 && g.r_inner < g.r_outer) {
            return Err(invalid("geometry.r_inner", "need 0 < r_inner < r_outer"));
        }
        if !(g.h > 0.0 && g.h < g.r_inner) {
            return Err(invalid("geometry.h", "need 0 < h < r_inner"));
        }
        for (v, key) in [
            (self.physics.d_c, "physics.d_c"),
            (self.physics.d_e, "physics.d_e"),
        ] {
            if !(v > 0.0) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if let Some(d_b) = self.physics.d_b {
            if !(d_b > 0.0) {
                return Err(invalid("physics.d_b", "must be positive"));
            }
        }
        self.physics
            .flux
            .validate()
            .map_err(|e| invalid("physics.flux", e.to_string()))?;
        self.physics
            .rates
            .validate()
            .map_err(|e| invalid("physics.rates", e.to_string()))?;
        if let Some(r) = &self.physics.reaction {
            r.validate()
                .map_err(|e| invalid("physics.reaction", e.to_string()))?;
        }
        let buffered = [
            self.physics.reaction.is_some(),
            self.physics.d_b.is_some(),
            self.initial.b.is_some(),
        ];
        if buffered.iter().any(|&x| x != buffered[0]) {
            return Err(invalid(
                "physics.reaction",
                "reaction, d_b and initial.b must be given together",
            ));
        }
        if !(self.initial.u > 0.0 && self.initial.u_e > 0.0) {
            return Err(invalid(
                "initial.u",
                "initial concentrations must be positive",
            ));
        }
        if let (Some(b), Some(r)) = (self.initial.b, &self.physics.reaction) {
            if !(0.0..=r.b0).contains(&b) {
                return Err(invalid(
                    "initial.b",
                    format!("must lie in [0, b0 = {}]", r.b0),
                ));
            }
        }
        if !self.gating_state().in_simplex(0.0) {
            return Err(invalid("initial.gating", "must lie in the simplex"));
        }
        let n = &self.numerics;
        if !(n.dt > 0.0 && n.t_end > 0.0) {
            return Err(invalid("numerics.dt", "dt and t_end must be positive"));
        }
        let steps = n.t_end / n.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid(
                "numerics.dt",
                format!(
                    "dt = {} must divide t_end = {} (t_end/dt = {steps})",
                    n.dt, n.t_end
                ),
            ));
        }
        self.influx
            .validate()
            .map_err(|e| invalid("influx", e.to_string()))?;
        if self.output.timeseries_stride == 0 {
            return Err(invalid("output.timeseries_stride", "must be at least 1"));
        }
        for &t in &self.output.snapshot_times {
            if !(0.0..=n.t_end).contains(&t) {
                return Err(invalid(
                    "output.snapshot_times",
                    format!("time {t} outside [0, {}]", n.t_end),
                ));
            }
        }
        if self.flags.clamp_enabled {
            match &self.flags.clamp {
                Some(c) if c.a > 0.0 && c.level > 0.0 => {}
                _ => {
                    return Err(invalid(
                        "flags.clamp",
                        "clamp_enabled requires clamp = { a > 0, level > 0 }",
                    ))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioId {
    Ex3,
    Ex4,
}

impl FromStr for ScenarioId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ex3" => Ok(ScenarioId::Ex3),
            "ex4" => Ok(ScenarioId::Ex4),
            other => Err(format!("unknown scenario `{other}`; known: ex3, ex4")),
        }
    }
}

/// Built-in scenario catalog. `ex3` is the minimal two-field system that
/// produces a calcium wave; `ex4` is the full three-field system with the
/// buffer and literature coefficients.
pub fn builtin_scenario(id: ScenarioId) -> ScenarioConfig {
    match id {
        ScenarioId::Ex3 => ScenarioConfig {
            name: "ex3".into(),
            geometry: GeometrySection {
                r_inner: 1.0,
                r_outer: 2.0,
                h: PI / 48.0,
            },
            physics: PhysicsSection {
                d_c: 1.0,
                d_e: 1.0,
                d_b: None,
                flux: FluxParams {
                    c1e: 0.17,
                    c2e: 8853.54,
                    c3e: 1.0 / 150.0,
                    c1c: 19954.0 / 540000.0,
                    c2c: 19954.0 / 540000.0,
                    c3c: 1.0 / 540000.0,
                    ks: 2.0,
                    kp: 1.0,
                    kn: 1.0,
                    c_o: 1000.0,
                    m: 1e-3,
                },
                rates: RateConstants::keizer_levine(),
                reaction: None,
            },
            initial: InitialSection {
                u: 0.05,
                b: None,
                u_e: 180.0,
                gating: [0.798, 0.0, 0.202],
            },
            influx: InfluxPulse::Rect {
                amplitude: 3.0,
                t_start: 0.05,
                t_end: 0.65,
                min_y_minus_x: 2.5,
            },
            numerics: NumericsSection {
                dt: 0.00375,
                t_end: 12.0,
            },
            output: OutputSection {
                dir: "out/ex3".into(),
                snapshot_times: vec![
                    0.12, 0.6, 0.72, 0.84, 1.08, 1.44, 1.92, 3.12, 4.32, 5.52, 7.32, 9.12,
                ],
                timeseries_stride: 8,
            },
            flags: FlagsSection::default(),
        },
        ScenarioId::Ex4 => ScenarioConfig {
            name: "ex4".into(),
            geometry: GeometrySection {
                r_inner: 1.2,
                r_outer: 2.0,
                h: PI / 32.0,
            },
            physics: PhysicsSection {
                d_c: 220.0,
                d_e: 220.0,
                d_b: Some(20.0),
                flux: FluxParams {
                    c1e: 0.829468,
                    c2e: 11000.0,
                    c3e: 0.038,
                    c1c: 8.5,
                    c2c: 37.6,
                    c3c: 0.0045,
                    ks: 0.18,
                    kp: 0.06,
                    kn: 1.8,
                    c_o: 1000.0,
                    m: 1e-3,
                },
                rates: RateConstants::keizer_levine(),
                reaction: Some(ReactionParams {
                    kb_minus: 16.65,
                    kb_plus: 27.0,
                    b0: 40.0,
                }),
            },
            initial: InitialSection {
                u: 0.05,
                b: Some(37.0),
                u_e: 250.0,
                gating: [0.994, 1.5721e-7, 5.6625e-3],
            },
            influx: InfluxPulse::Bump {
                amplitude: 240.0,
                t_start: 0.1,
                t_end: 0.3,
                min_y_minus_x: 2.5,
            },
            numerics: NumericsSection {
                dt: 0.01 / 16.0,
                t_end: 80.0,
            },
            output: OutputSection {
                dir: "out/ex4".into(),
                snapshot_times: vec![
                    0.04, 0.24, 0.44, 0.64, 0.84, 1.04, 1.24, 1.44, 1.64, 1.88, 2.44, 3.64, 4.8,
                    16.8, 28.8, 74.4,
                ],
                timeseries_stride: 64,
            },
            flags: FlagsSection::default(),
        },
    }
}

pub fn parse_config_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|span| text[..span.start].lines().count().max(1));
        ConfigError::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

pub fn write_config_str(config: &ScenarioConfig) -> String {
    toml::to_string_pretty(config).expect("scenario config serializes")
}

pub fn write_config(config: &ScenarioConfig, path: &Path) -> Result<(), ConfigError> {
    std::fs::write(path, write_config_str(config))?;
    Ok(())
}

/// Model evaluating the physiological flux laws of a scenario.
pub struct ScenarioModel {
    flux: FluxParams,
    reaction: Option<ReactionParams>,
    influx: InfluxPulse,
    clamp: Option<ClampSpec>,
}

impl ScenarioModel {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            flux: config.physics.flux,
            reaction: config.physics.reaction,
            influx: config.influx,
            clamp: config
                .flags
                .clamp_enabled
                .then_some(config.flags.clamp)
                .flatten(),
        }
    }

    fn cl(&self, v: f64) -> f64 {
        match &self.clamp {
            Some(spec) => phi_clamp(v, spec),
            None => v,
        }
    }
}

impl Model for ScenarioModel {
    fn source_u(&self, s: &VolumeSample) -> f64 {
        match &self.reaction {
            Some(r) => reaction(self.cl(s.b), self.cl(s.u), r),
            None => 0.0,
        }
    }

    fn source_b(&self, s: &VolumeSample) -> f64 {
        self.source_u(s)
    }

    fn outer_flux_u(&self, s: &BoundarySample) -> f64 {
        flux_plasma(self.cl(s.u), s.t, s.x, s.y, &self.flux, &self.influx)
    }

    fn iface_flux_u(&self, s: &BoundarySample) -> f64 {
        -flux_er(self.cl(s.u), self.cl(s.ue), s.p, &self.flux)
    }

    fn iface_flux_e(&self, s: &BoundarySample) -> f64 {
        flux_er(self.cl(s.u), self.cl(s.ue), s.p, &self.flux)
    }

    fn has_cytosol_sources(&self) -> bool {
        self.reaction.is_some()
    }

    fn ue_floor(&self) -> Option<f64> {
        Some(self.flux.m)
    }
}

/// Build a ready-to-run simulation from a validated configuration.
pub fn simulation_from_config(
    config: &ScenarioConfig,
) -> Result<Simulation<ScenarioModel>, SimError> {
    config
        .validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let geometry = Geometry::generate(
        config.geometry.r_inner,
        config.geometry.r_outer,
        config.geometry.h,
    )?;
    let state = FieldState::uniform(
        &geometry,
        config.initial.u,
        config.initial.b,
        config.initial.u_e,
        config.gating_state(),
        config.physics.rates,
    )?;
    let diffusion = Diffusion {
        d_c: config.physics.d_c,
        d_b: config.physics.d_b,
        d_e: config.physics.d_e,
    };
    let model = ScenarioModel::from_config(config);
    let mut sim = Simulation::new(geometry, diffusion, config.numerics.dt, state, model)?;
    if config.flags.deterministic {
        sim.set_deterministic();
    }
    Ok(sim)
}

/// Snapshot schedule: requested times rounded to the nearest step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub requested: f64,
    pub step: usize,
    pub actual: f64,
}

pub fn build_schedule(times: &[f64], dt: f64, n_steps: usize) -> Vec<ScheduleEntry> {
    let mut entries: Vec<ScheduleEntry> = times
        .iter()
        .map(|&requested| {
            let step = (requested / dt).round().clamp(0.0, n_steps as f64) as usize;
            ScheduleEntry {
                requested,
                step,
                actual: step as f64 * dt,
            }
        })
        .collect();
    entries.sort_by(|a, b| a.step.cmp(&b.step));
    entries
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_values_pinned() {
        let ex3 = builtin_scenario(ScenarioId::Ex3);
        assert_eq!(ex3.initial.u_e, 180.0);
        assert_eq!(ex3.numerics.dt * 3200.0, 12.0);
        assert!(ex3.validate().is_ok());
        let ex4 = builtin_scenario(ScenarioId::Ex4);
        assert_eq!(ex4.numerics.dt, 0.000625);
        assert_eq!(ex4.initial.b, Some(37.0));
        assert!(ex4.validate().is_ok());
    }

    #[test]
    fn roundtrip_is_identity() {
        for id in [ScenarioId::Ex3, ScenarioId::Ex4] {
            let config = builtin_scenario(id);
            let text = write_config_str(&config);
            let back = parse_config_str(&text).unwrap();
            assert_eq!(back, config);
        }
    }

    #[test]
    fn rejects_dt_not_dividing_t_end() {
        let mut config = builtin_scenario(ScenarioId::Ex3);
        config.numerics.dt = 0.007;
        match config.validate() {
            Err(ConfigError::Invalid { key, message }) => {
                assert_eq!(key, "numerics.dt");
                assert!(
                    message.contains("0.007") && message.contains("12"),
                    "{message}"
                );
            }
            other => panic!("expected invalid dt, got {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_diffusion() {
        let config = builtin_scenario(ScenarioId::Ex3);
        let mut text = write_config_str(&config);
        text = text.replace("d_c = 1.0", "d_c = -1.0");
        assert!(matches!(
            parse_config_str(&text),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn rejects_missing_required_section() {
        let config = builtin_scenario(ScenarioId::Ex3);
        let text = write_config_str(&config);
        let start = text.find("[numerics]").unwrap();
        let end = text[start..].find("\n[").unwrap() + start;
        let without = format!("{}{}", &text[..start], &text[end..]);
        match parse_config_str(&without) {
            Err(ConfigError::Parse { message, .. }) => {
                assert!(message.contains("numerics"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_with_line() {
        let config = builtin_scenario(ScenarioId::Ex3);
        let mut text = write_config_str(&config);
        text.push_str("\n[geometry2]\nbogus = 1\n");
        match parse_config_str(&text) {
            Err(ConfigError::Parse { line, .. }) => assert!(line.is_some()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_incomplete_buffer_spec() {
        let mut config = builtin_scenario(ScenarioId::Ex4);
        config.initial.b = None;
        assert!(config.validate().is_err());
    }

    #[test]
    fn schedule_maps_times_to_steps() {
        let entries = build_schedule(&[0.12, 0.6, 9.12], 0.00375, 3200);
        assert_eq!(entries[0].step, 32);
        assert_eq!(entries[1].step, 160);
        assert_eq!(entries[2].step, 2432);
        for e in &entries {
            assert!((e.actual - e.requested).abs() <= 0.00375 / 2.0);
        }
    }

    #[test]
    fn scenario_ids_parse() {
        assert_eq!("ex3".parse::<ScenarioId>().unwrap(), ScenarioId::Ex3);
        assert!("ex5".parse::<ScenarioId>().is_err());
    }

    /// With the clamp enabled, flux arguments saturate at level + a: wild
    /// field values stop feeding the nonlinearities.
    #[test]
    fn clamp_flag_saturates_flux_arguments() {
        use crate::flux::phi_clamp;
        use crate::stepper::BoundarySample;
        let mut config = builtin_scenario(ScenarioId::Ex3);
        config.flags.clamp_enabled = true;
        let spec = ClampSpec {
            a: 1.0,
            level: 500.0,
        };
        config.flags.clamp = Some(spec);
        config.validate().unwrap();
        let model = ScenarioModel::from_config(&config);
        let sample = |u: f64| BoundarySample {
            x: 0.0,
            y: 2.0,
            nx: 0.0,
            ny: 1.0,
            t: 3.0,
            u,
            ue: 180.0,
            p: 0.0,
            p_aux: 0.0,
        };
        let at_huge = model.outer_flux_u(&sample(1e9));
        let at_cap = model.outer_flux_u(&sample(phi_clamp(1e9, &spec)));
        assert_eq!(at_huge, at_cap);
        assert_eq!(phi_clamp(1e9, &spec), 501.0);
        // Disabled clamp (the default) leaves arguments untouched.
        let raw = ScenarioModel::from_config(&builtin_scenario(ScenarioId::Ex3));
        assert_ne!(raw.outer_flux_u(&sample(1e9)), at_huge);
    }

    #[test]
    fn clamp_flag_requires_parameters() {
        let mut config = builtin_scenario(ScenarioId::Ex3);
        config.flags.clamp_enabled = true;
        assert!(matches!(
            config.validate(),
            Err(ConfigError::Invalid { .. })
        ));
    }
}
