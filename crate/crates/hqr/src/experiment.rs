//! Named experiments driven by a TOML run configuration.
//!
//! A configuration is layered: built-in defaults, then an optional file,
//! then `section.key=value` overrides. Every physical quantity carries its
//! unit in the key name.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::cqed::{self, CqedError, EmitterCavityParams, Material, MaterialPreset};
use crate::czgate::{self, CzError, GateChannel};
use crate::entangle::{self, EntangleError, Geometry, LinkParams};
use crate::repeater::{self, NetworkConfig, NoiseModel, ProtocolPolicy, RepeaterError, WhiteNoiseFamily};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Parse { .. } | ExperimentError::Invalid(_) => 2,
            ExperimentError::NotConverged(_) => 3,
            ExperimentError::Io { .. } => 4,
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        ExperimentError::Invalid(vec![msg.into()])
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<CqedError> for ExperimentError {
    fn from(e: CqedError) -> Self {
        match e {
            CqedError::InvalidParams(m) => Self::invalid(m),
            other => Self::NotConverged(other.to_string()),
        }
    }
}

impl From<EntangleError> for ExperimentError {
    fn from(e: EntangleError) -> Self {
        match e {
            EntangleError::Quadrature { .. } => Self::NotConverged(e.to_string()),
            other => Self::invalid(other.to_string()),
        }
    }
}

impl From<CzError> for ExperimentError {
    fn from(e: CzError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<RepeaterError> for ExperimentError {
    fn from(e: RepeaterError) -> Self {
        match e {
            RepeaterError::Stalled { .. } | RepeaterError::InsufficientRuns { .. } => Self::NotConverged(e.to_string()),
            RepeaterError::Link(inner) => inner.into(),
            RepeaterError::Gate(inner) => inner.into(),
            other => Self::invalid(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    Fig2,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
    Custom,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 8] = [
        Self::Fig2,
        Self::Fig5,
        Self::Fig6,
        Self::Fig7,
        Self::Fig8,
        Self::Fig9,
        Self::Fig10,
        Self::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Fig5 => "fig5",
            Self::Fig6 => "fig6",
            Self::Fig7 => "fig7",
            Self::Fig8 => "fig8",
            Self::Fig9 => "fig9",
            Self::Fig10 => "fig10",
            Self::Custom => "custom",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Fig2 => "repeater rate against link success probability, white-noise errors",
            Self::Fig5 => "fidelity and success probability against distinguishability",
            Self::Fig6 => "optimized fidelity against success probability per fiber length",
            Self::Fig7 => "C-Z gate infidelity against local loss",
            Self::Fig8 => "repeater rate and fidelity with physical link and gate errors",
            Self::Fig9 => "silicon saturation sweeps",
            Self::Fig10 => "ZnSe and trapped-ion saturation sweeps",
            Self::Custom => "one repeater run with the configured network, noise and policy",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkNoise {
    Physical,
    WhiteNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub n_segments: usize,
    pub spacing_km: f64,
    pub attenuation_length_km: f64,
    pub slot_time_us: f64,
    /// Zero selects the minimum, 2 + 2log₂N.
    pub qubits_per_station: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            n_segments: 128,
            spacing_km: 10.0,
            attenuation_length_km: entangle::ELL0_KM,
            slot_time_us: 50.0,
            qubits_per_station: 0,
        }
    }
}

impl NetworkSection {
    pub fn network(&self) -> NetworkConfig {
        let mut cfg = NetworkConfig::new(self.n_segments, self.spacing_km);
        cfg.slot_time_s = self.slot_time_us * 1e-6;
        if self.qubits_per_station > 0 {
            cfg.qubits_per_station = self.qubits_per_station;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub noise: LinkNoise,
    pub pc: f64,
    pub theta_rad: f64,
    pub geometry: Geometry,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            noise: LinkNoise::Physical,
            pc: 0.5,
            theta_rad: 0.01,
            geometry: Geometry::EndDetection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    /// Fraction of light lost locally during each gate.
    pub local_loss: f64,
    pub theta_rad: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        Self {
            local_loss: 0.002,
            theta_rad: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteNoiseSection {
    pub eps_init: f64,
    pub eps_gate: f64,
    pub success_probability: f64,
}

impl Default for WhiteNoiseSection {
    fn default() -> Self {
        Self {
            eps_init: 0.05,
            eps_gate: 0.005,
            success_probability: 0.36,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub target_fidelity: f64,
    /// Explicit rounds per level; empty means "target the fidelity".
    pub purification_rounds: Vec<u32>,
    pub max_rounds: u32,
    pub n_deliver: usize,
    pub trials: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            target_fidelity: 0.9,
            purification_rounds: Vec::new(),
            max_rounds: repeater::MAX_ROUNDS_PER_LEVEL,
            n_deliver: 5,
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2Section {
    pub n_segments: usize,
    pub eps_init: Vec<f64>,
    pub eps_gate: f64,
    pub success_probability: Vec<f64>,
    pub target_fidelity: f64,
    pub trials: usize,
    pub n_deliver: usize,
}

impl Default for Fig2Section {
    fn default() -> Self {
        Self {
            n_segments: 16,
            eps_init: vec![0.05, 0.30],
            eps_gate: 0.005,
            success_probability: vec![0.01, 0.02, 0.05, 0.1, 0.2],
            target_fidelity: 0.95,
            trials: 3,
            n_deliver: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig5Section {
    pub ell_over_ell0: f64,
    pub pc: Vec<f64>,
    pub d_max: f64,
    pub d_points: usize,
}

impl Default for Fig5Section {
    fn default() -> Self {
        Self {
            ell_over_ell0: 0.4,
            pc: (0..=8).map(|k| k as f64 * 0.25).collect(),
            d_max: 4.0,
            d_points: 81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig6Section {
    pub ell_over_ell0: Vec<f64>,
    pub pc: Vec<f64>,
}

impl Default for Fig6Section {
    fn default() -> Self {
        Self {
            ell_over_ell0: vec![0.1, 0.2, 0.4, 0.8, 1.6],
            pc: (0..=20).map(|k| k as f64 * 0.1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig7Section {
    pub theta_rad: Vec<f64>,
    pub local_loss: Vec<f64>,
}

impl Default for Fig7Section {
    fn default() -> Self {
        Self {
            theta_rad: vec![0.001, 0.01, 0.1],
            local_loss: logspace(1e-4, 0.1, 13),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig8Section {
    pub local_loss: Vec<f64>,
    pub target_fidelity: Vec<f64>,
}

impl Default for Fig8Section {
    fn default() -> Self {
        Self {
            local_loss: vec![0.001, 0.002, 0.005],
            target_fidelity: vec![0.8, 0.9, 0.95],
        }
    }
}

/// One group of saturation-sweep curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPanel {
    pub material: String,
    pub sigma_p_ns: Vec<f64>,
    /// αω₀ in units of g′; each value is one curve.
    pub products: Vec<f64>,
    pub saturation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub panels: Vec<SweepPanel>,
}

impl SweepSection {
    fn silicon() -> Self {
        let saturation = logspace(0.1, 100.0, 13);
        Self {
            panels: vec![
                SweepPanel {
                    material: "si".into(),
                    sigma_p_ns: vec![30.0],
                    products: vec![100.0, 316.2, 1000.0, 3162.0],
                    saturation: saturation.clone(),
                },
                SweepPanel {
                    material: "si".into(),
                    sigma_p_ns: vec![100.0, 300.0],
                    products: vec![3162.0],
                    saturation,
                },
            ],
        }
    }

    fn znse_and_ion() -> Self {
        Self {
            panels: vec![
                SweepPanel {
                    material: "znse".into(),
                    sigma_p_ns: vec![0.5, 1.0, 2.0],
                    products: vec![1e4],
                    saturation: logspace(0.1, 100.0, 13),
                },
                SweepPanel {
                    material: "ion".into(),
                    sigma_p_ns: vec![71.0, 142.0],
                    products: vec![1e3],
                    saturation: logspace(0.003, 3.0, 13),
                },
            ],
        }
    }
}

/// Overrides for one material preset. Frequencies are cyclic (rate/2π).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetOverride {
    pub g_mhz: Option<f64>,
    pub kappa_mhz: Option<f64>,
    pub gamma_cav_mhz: Option<f64>,
    pub tau_r_ns: Option<f64>,
    pub tau_nr_ns: Option<f64>,
    pub q_factor: Option<f64>,
    pub lambda_nm: Option<f64>,
    pub n_index: Option<f64>,
    pub v_mode_um3: Option<f64>,
}

impl PresetOverride {
    fn apply(&self, mut p: EmitterCavityParams) -> EmitterCavityParams {
        let rate = |mhz: f64| 2.0 * PI * mhz * 1e6;
        if let Some(v) = self.g_mhz {
            p.g = rate(v);
        }
        if let Some(v) = self.kappa_mhz {
            p.kappa = rate(v);
        }
        if let Some(v) = self.gamma_cav_mhz {
            p.gamma_cav = rate(v);
        }
        if let Some(v) = self.tau_r_ns {
            p.tau_r = v * 1e-9;
        }
        if let Some(v) = self.tau_nr_ns {
            p.tau_nr = v * 1e-9;
        }
        if let Some(v) = self.q_factor {
            p.q_factor = v;
        }
        if let Some(v) = self.lambda_nm {
            p.lambda_nm = v;
        }
        if let Some(v) = self.n_index {
            p.n_index = v;
        }
        if let Some(v) = self.v_mode_um3 {
            p.v_mode = v * 1e-18;
        }
        p
    }

    fn filled() -> Self {
        Self {
            g_mhz: Some(0.0),
            kappa_mhz: Some(0.0),
            gamma_cav_mhz: Some(0.0),
            tau_r_ns: Some(0.0),
            tau_nr_ns: Some(0.0),
            q_factor: Some(0.0),
            lambda_nm: Some(0.0),
            n_index: Some(0.0),
            v_mode_um3: Some(0.0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetSection {
    pub si: PresetOverride,
    pub znse: PresetOverride,
    pub ion: PresetOverride,
}

impl PresetSection {
    fn get(&self, material: Material) -> &PresetOverride {
        match material {
            Material::Silicon => &self.si,
            Material::ZincSelenide => &self.znse,
            Material::TrappedIon => &self.ion,
        }
    }
}

/// A complete, resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub seed: u64,
    pub network: NetworkSection,
    pub link: LinkSection,
    pub gate: GateSection,
    pub white_noise: WhiteNoiseSection,
    pub protocol: ProtocolSection,
    pub presets: PresetSection,
    pub fig2: Fig2Section,
    pub fig5: Fig5Section,
    pub fig6: Fig6Section,
    pub fig7: Fig7Section,
    pub fig8: Fig8Section,
    pub fig9: SweepSection,
    pub fig10: SweepSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            network: NetworkSection::default(),
            link: LinkSection::default(),
            gate: GateSection::default(),
            white_noise: WhiteNoiseSection::default(),
            protocol: ProtocolSection::default(),
            presets: PresetSection::default(),
            fig2: Fig2Section::default(),
            fig5: Fig5Section::default(),
            fig6: Fig6Section::default(),
            fig7: Fig7Section::default(),
            fig8: Fig8Section::default(),
            fig9: SweepSection::silicon(),
            fig10: SweepSection::znse_and_ion(),
        }
    }
}

/// Where the configuration came from, for error messages.
#[derive(Debug, Clone)]
pub struct ConfigSource {
    pub label: String,
    pub text: String,
}

impl ConfigSource {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Ok(Self {
            label: path.display().to_string(),
            text,
        })
    }
}

impl Config {
    /// Defaults, then `source`, then `overrides` (`section.key=value`).
    pub fn load(source: Option<&ConfigSource>, overrides: &[String]) -> Result<Self> {
        let mut table = match source {
            Some(src) => parse_source(src)?,
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let unknown = unknown_keys(&table);
        if !unknown.is_empty() {
            return Err(ExperimentError::Invalid(
                unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect(),
            ));
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ExperimentError::invalid(e.message().to_string()))?;
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(ExperimentError::Invalid(problems));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Range and consistency problems, all of them.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check(
            self.schema_version == SCHEMA_VERSION,
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
        );
        let n = &self.network;
        check(
            n.n_segments > 0 && n.n_segments.is_power_of_two(),
            format!("network.n_segments must be a power of two, got {}", n.n_segments),
        );
        check(n.spacing_km > 0.0, format!("network.spacing_km must be positive, got {}", n.spacing_km));
        check(
            n.attenuation_length_km > 0.0,
            format!("network.attenuation_length_km must be positive, got {}", n.attenuation_length_km),
        );
        check(n.slot_time_us > 0.0, format!("network.slot_time_us must be positive, got {}", n.slot_time_us));
        if n.n_segments.is_power_of_two() && n.qubits_per_station > 0 {
            let min = 2 + 2 * n.n_segments.trailing_zeros() as usize;
            check(
                n.qubits_per_station >= min && n.qubits_per_station % 2 == 0,
                format!("network.qubits_per_station must be even and at least {min}, got {}", n.qubits_per_station),
            );
        }
        check(self.link.pc >= 0.0, format!("link.pc must be non-negative, got {}", self.link.pc));
        check(
            self.link.theta_rad > 0.0 && self.link.theta_rad < PI,
            format!("link.theta_rad must lie in (0, π), got {}", self.link.theta_rad),
        );
        check(
            (0.0..0.95).contains(&self.gate.local_loss),
            format!("gate.local_loss must lie in [0, 0.95), got {}", self.gate.local_loss),
        );
        check(self.gate.theta_rad != 0.0, "gate.theta_rad must be nonzero".into());
        let w = &self.white_noise;
        for (k, v) in [("eps_init", w.eps_init), ("eps_gate", w.eps_gate), ("success_probability", w.success_probability)] {
            check((0.0..=1.0).contains(&v), format!("white_noise.{k} must lie in [0, 1], got {v}"));
        }
        let p = &self.protocol;
        check(
            (0.0..=1.0).contains(&p.target_fidelity),
            format!("protocol.target_fidelity must lie in [0, 1], got {}", p.target_fidelity),
        );
        if !p.purification_rounds.is_empty() && n.n_segments.is_power_of_two() {
            let levels = n.n_segments.trailing_zeros() as usize + 1;
            check(
                p.purification_rounds.len() == levels,
                format!(
                    "protocol.purification_rounds needs {levels} entries for {} segments, got {}",
                    n.n_segments,
                    p.purification_rounds.len()
                ),
            );
        }
        check(p.n_deliver >= 2, format!("protocol.n_deliver must be at least 2, got {}", p.n_deliver));
        check(p.trials >= 1, "protocol.trials must be at least 1".into());
        let f2 = &self.fig2;
        check(
            f2.n_segments > 0 && f2.n_segments.is_power_of_two(),
            format!("fig2.n_segments must be a power of two, got {}", f2.n_segments),
        );
        check(
            f2.success_probability.len() >= 4,
            "fig2.success_probability needs at least 4 points for a fit".into(),
        );
        for &ps in &f2.success_probability {
            check(ps > 0.0 && ps <= 1.0, format!("fig2.success_probability entries must lie in (0, 1], got {ps}"));
        }
        for &e in &f2.eps_init {
            check((0.0..=1.0).contains(&e), format!("fig2.eps_init entries must lie in [0, 1], got {e}"));
        }
        check(f2.n_deliver >= 2 && f2.trials >= 1, "fig2 needs n_deliver ≥ 2 and trials ≥ 1".into());
        check(self.fig5.d_points >= 2, "fig5.d_points must be at least 2".into());
        check(self.fig5.d_max > 0.0, "fig5.d_max must be positive".into());
        for &l in self.fig7.local_loss.iter().chain(&self.fig8.local_loss) {
            check((0.0..0.95).contains(&l), format!("local_loss entries must lie in [0, 0.95), got {l}"));
        }
        for (name, section) in [("fig9", &self.fig9), ("fig10", &self.fig10)] {
            for (i, panel) in section.panels.iter().enumerate() {
                check(
                    Material::from_name(&panel.material).is_some(),
                    format!("{name}.panels[{i}].material `{}` is not a known preset", panel.material),
                );
                for (k, list) in [("sigma_p_ns", &panel.sigma_p_ns), ("products", &panel.products), ("saturation", &panel.saturation)] {
                    check(
                        !list.is_empty() && list.iter().all(|v| *v > 0.0),
                        format!("{name}.panels[{i}].{k} must be a nonempty list of positive values"),
                    );
                }
            }
        }
        for m in Material::ALL {
            if let Err(e) = self.preset(m).params.validate() {
                out.push(format!("presets.{}: {e}", m.name()));
            }
        }
        out
    }

    /// Material preset with this configuration's overrides applied.
    pub fn preset(&self, material: Material) -> MaterialPreset {
        let mut preset = MaterialPreset::get(material);
        preset.params = self.presets.get(material).apply(preset.params);
        preset
    }

    pub fn link(&self) -> Result<LinkParams> {
        Ok(LinkParams::optimized_over_fiber(
            self.network.spacing_km,
            self.network.attenuation_length_km,
            self.link.pc,
            self.link.theta_rad,
            self.link.geometry,
        )?)
    }

    pub fn gate_channel(&self, local_loss: f64) -> Result<GateChannel> {
        Ok(GateChannel::semi_ideal(self.gate.theta_rad, 1.0 - local_loss)?)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        Ok(match self.link.noise {
            LinkNoise::Physical => NoiseModel::Physical {
                link: self.link()?,
                gate: self.gate_channel(self.gate.local_loss)?,
            },
            LinkNoise::WhiteNoise => NoiseModel::WhiteNoise {
                eps_init: self.white_noise.eps_init,
                eps_gate: self.white_noise.eps_gate,
                success_probability: self.white_noise.success_probability,
            },
        })
    }
}

fn parse_source(src: &ConfigSource) -> Result<toml::Table> {
    // A sidecar metadata file carries the resolved configuration verbatim.
    if src.label.ends_with(".json") {
        let meta: serde_json::Value = serde_json::from_str(&src.text).map_err(|e| ExperimentError::Parse {
            path: src.label.clone(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let text = meta
            .get("config_toml")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ExperimentError::invalid(format!("{} has no `config_toml` entry", src.label)))?;
        return parse_source(&ConfigSource {
            label: format!("{} (config_toml)", src.label),
            text: text.to_string(),
        });
    }
    src.text.parse::<toml::Table>().map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(&src.text, span.start))
            .unwrap_or((1, 1));
        ExperimentError::Parse {
            path: src.label.clone(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

/// Set `section.key=value`, parsing the value as TOML and falling back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ExperimentError::invalid(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ExperimentError::invalid(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ExperimentError::invalid(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Keys in `table` that the schema does not know, as dotted paths.
pub fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut schema = Config::default();
    schema.presets = PresetSection {
        si: PresetOverride::filled(),
        znse: PresetOverride::filled(),
        ion: PresetOverride::filled(),
    };
    let schema = toml::Table::try_from(&schema).expect("schema serializes");
    let mut out = Vec::new();
    collect_unknown(table, &schema, "", &mut out);
    out
}

fn collect_unknown(table: &toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match schema.get(k) {
            None => out.push(path),
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(t) = v {
                    collect_unknown(t, sub, &path, out);
                }
            }
            Some(toml::Value::Array(items)) => {
                // Arrays of tables are checked against their first default entry.
                if let (toml::Value::Array(given), Some(toml::Value::Table(proto))) = (v, items.first()) {
                    for (i, item) in given.iter().enumerate() {
                        if let toml::Value::Table(t) = item {
                            collect_unknown(t, proto, &format!("{path}[{i}]"), out);
                        }
                    }
                }
            }
            Some(_) => {}
        }
    }
}

/// Human-readable validation of a configuration file. Never writes.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub source: String,
    pub unknown_keys: Vec<String>,
    pub problems: Vec<String>,
    pub resolved: Option<String>,
    pub presets: Vec<ResolvedPreset>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedPreset {
    pub name: &'static str,
    pub params: EmitterCavityParams,
    pub cooperativity: f64,
    pub overridden: bool,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.unknown_keys.is_empty() && self.problems.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "config: {}", self.source)?;
        for k in &self.unknown_keys {
            writeln!(f, "unknown key: {k}")?;
        }
        for p in &self.problems {
            writeln!(f, "error: {p}")?;
        }
        for p in &self.presets {
            let q = &p.params;
            writeln!(
                f,
                "preset {}{}: g/2π = {:.6} MHz, κ/2π = {:.6} MHz, γ/2π = {:.6} MHz, τ_r = {:.6e} s, τ_nr = {:.6e} s, Φ = {:.4}",
                p.name,
                if p.overridden { " (overridden)" } else { "" },
                q.g / (2.0 * PI * 1e6),
                q.kappa / (2.0 * PI * 1e6),
                q.gamma_cav / (2.0 * PI * 1e6),
                q.tau_r,
                q.tau_nr,
                p.cooperativity
            )?;
        }
        writeln!(f, "{}", if self.ok() { "status: ok" } else { "status: invalid" })
    }
}

pub fn validate_config(src: &ConfigSource) -> Result<ValidationReport> {
    let table = parse_source(src)?;
    let unknown_keys = unknown_keys(&table);
    let mut report = ValidationReport {
        source: src.label.clone(),
        unknown_keys,
        problems: Vec::new(),
        resolved: None,
        presets: Vec::new(),
    };
    let parsed: std::result::Result<Config, _> = toml::Value::Table(table.clone()).try_into();
    match parsed {
        Ok(cfg) if report.unknown_keys.is_empty() => {
            report.problems = cfg.problems();
            let given = table.get("presets").and_then(|v| v.as_table());
            for m in Material::ALL {
                let preset = cfg.preset(m);
                report.presets.push(ResolvedPreset {
                    name: m.name(),
                    cooperativity: cqed::cooperativity(&preset.params),
                    params: preset.params,
                    overridden: given.is_some_and(|g| g.contains_key(m.name())),
                });
            }
            report.resolved = Some(cfg.to_toml());
        }
        Ok(_) => {}
        Err(e) => report.problems.push(e.message().to_string()),
    }
    Ok(report)
}

/// One cell of an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    /// CSV text: floats in scientific notation with 17 significant digits.
    pub fn to_csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(v) => json!(v.to_string()),
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
        }
    }
}

/// Tabular experiment output plus summary facts for the metadata record.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: serde_json::Value,
}

impl Dataset {
    fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
            summary: json!({}),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), v.to_json()))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
        s.push('\n');
        s
    }
}

pub fn run_experiment(name: ExperimentName, cfg: &Config) -> Result<Dataset> {
    match name {
        ExperimentName::Fig2 => fig2(cfg),
        ExperimentName::Fig5 => fig5(cfg),
        ExperimentName::Fig6 => fig6(cfg),
        ExperimentName::Fig7 => fig7(cfg),
        ExperimentName::Fig8 => fig8(cfg),
        ExperimentName::Fig9 => sweep(&cfg.fig9, cfg),
        ExperimentName::Fig10 => sweep(&cfg.fig10, cfg),
        ExperimentName::Custom => custom(cfg),
    }
}

fn fig2(cfg: &Config) -> Result<Dataset> {
    let f2 = &cfg.fig2;
    let mut net = cfg.network.clone();
    net.n_segments = f2.n_segments;
    net.qubits_per_station = 0;
    let network = net.network();
    let mut ds = Dataset::new(vec![
        "eps_init",
        "initial_fidelity",
        "success_probability",
        "rate_hz",
        "rate_std_hz",
        "final_fidelity",
        "trials",
        "fitted_exponent",
    ]);
    let mut fits = Vec::new();
    for (k, &eps_init) in f2.eps_init.iter().enumerate() {
        let study = repeater::rate_study(
            &network,
            WhiteNoiseFamily {
                eps_init,
                eps_gate: f2.eps_gate,
            },
            &f2.success_probability,
            f2.target_fidelity,
            f2.trials,
            f2.n_deliver,
            cfg.seed.wrapping_add(k as u64),
        )?;
        for r in &study.rows {
            ds.push(vec![
                eps_init.into(),
                (1.0 - 0.75 * eps_init).into(),
                r.success_probability.into(),
                r.rate_hz.into(),
                r.rate_std_hz.into(),
                r.final_fidelity.into(),
                r.trials.into(),
                study.exponent.exponent.into(),
            ]);
        }
        fits.push(json!({
            "eps_init": eps_init,
            "exponent": study.exponent.exponent,
            "ci95": [study.exponent.ci95.0, study.exponent.ci95.1],
            "policy": study.policy.policy.purification_rounds,
            "forecast_fidelity": study.policy.final_fidelity,
        }));
    }
    ds.summary = json!({ "n_segments": f2.n_segments, "fits": fits });
    Ok(ds)
}

fn fig5(cfg: &Config) -> Result<Dataset> {
    let f5 = &cfg.fig5;
    let geometry = cfg.link.geometry;
    let t = entangle::fiber_transmission(f5.ell_over_ell0, geometry);
    let mut ds = Dataset::new(vec!["ell_over_ell0", "pc", "d", "ps", "fidelity"]);
    for &pc in &f5.pc {
        for k in 1..=f5.d_points {
            let d = f5.d_max * k as f64 / f5.d_points as f64;
            ds.push(vec![
                f5.ell_over_ell0.into(),
                pc.into(),
                d.into(),
                entangle::success_probability(d, t, pc).into(),
                entangle::small_angle_fidelity(d, t, pc, geometry.loss_factor()).into(),
            ]);
        }
    }
    ds.summary = json!({ "transmission": t });
    Ok(ds)
}

fn fig6(cfg: &Config) -> Result<Dataset> {
    let mut ds = Dataset::new(vec!["ell_over_ell0", "pc", "d", "ps", "fidelity"]);
    for &ell in &cfg.fig6.ell_over_ell0 {
        for row in entangle::fidelity_ps_curve(ell, &cfg.fig6.pc, cfg.link.geometry) {
            ds.push(vec![
                row.ell_over_ell0.into(),
                row.pc.into(),
                row.d.into(),
                row.ps.into(),
                row.fidelity.into(),
            ]);
        }
    }
    Ok(ds)
}

fn fig7(cfg: &Config) -> Result<Dataset> {
    let mut ds = Dataset::new(vec!["local_loss", "theta", "one_minus_lambda0"]);
    for row in czgate::cz_error_curve(&cfg.fig7.theta_rad, &cfg.fig7.local_loss)? {
        ds.push(vec![row.loss.into(), row.theta.into(), row.one_minus_lambda0.into()]);
    }
    Ok(ds)
}

fn rounds_text(policy: &ProtocolPolicy) -> String {
    policy
        .purification_rounds
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn fig8(cfg: &Config) -> Result<Dataset> {
    let network = cfg.network.network();
    network.validate().map_err(ExperimentError::from)?;
    let link = cfg.link()?;
    let mut jobs = Vec::new();
    for &loss in &cfg.fig8.local_loss {
        for &target in &cfg.fig8.target_fidelity {
            jobs.push((loss, target));
        }
    }
    let protocol = &cfg.protocol;
    let results: Vec<Result<Vec<Cell>>> = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(loss, target))| {
            let noise = NoiseModel::Physical {
                link,
                gate: cfg.gate_channel(loss)?,
            };
            let (source, gate) = noise.resolve()?;
            let forecast = repeater::target_policy(&network, &source, &gate, target, protocol.max_rounds)?;
            let mut rng = repeater::trial_rng(cfg.seed, idx as u64);
            let sim = repeater::run_simulation_with_rng(&network, &forecast.policy, &noise, protocol.n_deliver, &mut rng, None)?;
            Ok(vec![
                loss.into(),
                target.into(),
                rounds_text(&forecast.policy).into(),
                forecast.final_fidelity.into(),
                sim.rate_hz.into(),
                sim.mean_interval_s.into(),
                sim.std_interval_s.into(),
                sim.final_fidelity.into(),
                sim.pairs_delivered.into(),
            ])
        })
        .collect();
    let mut ds = Dataset::new(vec![
        "local_loss",
        "target_fidelity",
        "purification_rounds",
        "forecast_fidelity",
        "rate_hz",
        "mean_interval_s",
        "std_interval_s",
        "final_fidelity",
        "pairs_delivered",
    ]);
    for r in results {
        ds.push(r?);
    }
    let src = entangle::post_selected_state(&link)?;
    ds.summary = json!({
        "n_segments": network.n_segments,
        "qubits_per_station": network.qubits_per_station,
        "link_success_probability": src.ps,
        "link_fidelity": src.fidelity,
    });
    Ok(ds)
}

fn sweep(section: &SweepSection, cfg: &Config) -> Result<Dataset> {
    let mut ds = Dataset::new(vec![
        "material",
        "saturation_param",
        "alpha",
        "omega0",
        "sigma_p",
        "d",
        "fidelity",
        "theta",
        "loss",
        "coherence_valid",
    ]);
    let mut coops = BTreeMap::new();
    for panel in &section.panels {
        let material = Material::from_name(&panel.material)
            .ok_or_else(|| ExperimentError::invalid(format!("unknown material `{}`", panel.material)))?;
        let preset = cfg.preset(material);
        coops.insert(material.name(), cqed::cooperativity(&preset.params));
        let sigmas: Vec<f64> = panel.sigma_p_ns.iter().map(|s| s * 1e-9).collect();
        for row in cqed::saturation_sweep(&preset.params, &panel.products, &sigmas, &panel.saturation)? {
            ds.push(vec![
                material.name().into(),
                row.saturation_param.into(),
                row.alpha.into(),
                row.omega0.into(),
                row.sigma_p.into(),
                row.d.into(),
                row.fidelity.into(),
                row.theta.into(),
                row.loss.into(),
                Cell::Int(row.coherence_valid as i64),
            ]);
        }
    }
    ds.summary = json!({ "cooperativity": coops });
    Ok(ds)
}

fn custom(cfg: &Config) -> Result<Dataset> {
    let network = cfg.network.network();
    network.validate().map_err(ExperimentError::from)?;
    let noise = cfg.noise_model()?;
    let (source, gate) = noise.resolve()?;
    let (policy, forecast) = if cfg.protocol.purification_rounds.is_empty() {
        let f = repeater::target_policy(&network, &source, &gate, cfg.protocol.target_fidelity, cfg.protocol.max_rounds)?;
        (f.policy.clone(), f.final_fidelity)
    } else {
        let p = ProtocolPolicy::new(cfg.protocol.purification_rounds.clone());
        let f = repeater::forecast_policy(&source, &gate, &p, network.levels())?;
        (p, f.final_fidelity)
    };
    let runs: Vec<Result<repeater::SimResult>> = (0..cfg.protocol.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = repeater::trial_rng(cfg.seed, trial as u64);
            Ok(repeater::run_simulation_with_rng(
                &network,
                &policy,
                &noise,
                cfg.protocol.n_deliver,
                &mut rng,
                None,
            )?)
        })
        .collect();
    let mut ds = Dataset::new(vec![
        "trial",
        "rate_hz",
        "mean_interval_s",
        "std_interval_s",
        "final_fidelity",
        "pairs_delivered",
        "slots",
        "evictions",
    ]);
    for (trial, r) in runs.into_iter().enumerate() {
        let r = r?;
        ds.push(vec![
            trial.into(),
            r.rate_hz.into(),
            r.mean_interval_s.into(),
            r.std_interval_s.into(),
            r.final_fidelity.into(),
            r.pairs_delivered.into(),
            Cell::Int(r.slots as i64),
            Cell::Int(r.evictions as i64),
        ]);
    }
    ds.summary = json!({
        "purification_rounds": policy.purification_rounds,
        "forecast_fidelity": forecast,
        "link_success_probability": source.success_probability,
        "link_fidelity": source.state.bell_fidelity(),
    });
    Ok(ds)
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub data: PathBuf,
    pub metadata: PathBuf,
}

pub fn metadata_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Write the data file and its sidecar metadata record. The metadata holds
/// the resolved configuration, so passing it back as `--config` reproduces
/// the data byte for byte.
pub fn write_outputs(
    name: ExperimentName,
    cfg: &Config,
    ds: &Dataset,
    format: OutputFormat,
    output: &Path,
) -> Result<Artifacts> {
    let body = match format {
        OutputFormat::Csv => ds.to_csv(),
        OutputFormat::Json => ds.to_json(),
    };
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    std::fs::write(output, body).map_err(|e| ExperimentError::io(output, e))?;
    let meta = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": name.as_str(),
        "seed": cfg.seed,
        "format": format.extension(),
        "columns": ds.columns,
        "rows": ds.rows.len(),
        "summary": ds.summary,
        "config_toml": cfg.to_toml(),
    });
    let meta_path = metadata_path(output);
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    text.push('\n');
    std::fs::write(&meta_path, text).map_err(|e| ExperimentError::io(&meta_path, e))?;
    Ok(Artifacts {
        data: output.to_path_buf(),
        metadata: meta_path,
    })
}

/// `n` log-spaced points from `a` to `b` inclusive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|k| (la + (lb - la) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = Config::load(None, &[]).unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn empty_file_gives_defaults() {
        let src = ConfigSource {
            label: "empty.toml".into(),
            text: String::new(),
        };
        assert_eq!(Config::load(Some(&src), &[]).unwrap(), Config::default());
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = Config::load(
            None,
            &[
                "network.n_segments=16".into(),
                "link.noise=white-noise".into(),
                "presets.si.tau_nr_ns=500".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.network.n_segments, 16);
        assert_eq!(cfg.link.noise, LinkNoise::WhiteNoise);
        assert!((cfg.preset(Material::Silicon).params.tau_nr - 500e-9).abs() < 1e-20);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        let err = Config::load(None, &["network.n_segments=3".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("power of two"));
    }

    #[test]
    fn unknown_keys_are_listed() {
        let src = ConfigSource {
            label: "x.toml".into(),
            text: "bogus = 1\n[network]\nn_segmants = 4\n[presets.si]\ng_mhz = 30\n".into(),
        };
        let report = validate_config(&src).unwrap();
        assert_eq!(report.unknown_keys, vec!["bogus".to_string(), "network.n_segmants".to_string()]);
        assert!(!report.ok());
    }

    #[test]
    fn parse_errors_carry_position() {
        let src = ConfigSource {
            label: "bad.toml".into(),
            text: "[network]\nn_segments = = 4\n".into(),
        };
        match Config::load(Some(&src), &[]).unwrap_err() {
            ExperimentError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_has_seventeen_significant_digits() {
        assert_eq!(Cell::Num(0.1).to_csv(), "1.0000000000000001e-1");
        assert_eq!(Cell::Num(1.0 / 3.0).to_csv().parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = Config::load(None, &["fig8.local_loss=[0.003]".into(), "seed=9".into()]).unwrap();
        let src = ConfigSource {
            label: "round.toml".into(),
            text: cfg.to_toml(),
        };
        assert_eq!(Config::load(Some(&src), &[]).unwrap(), cfg);
    }
}
