//! Scenario configuration.
//!
//! Configs are TOML documents (`key = value` under `[section]` headers, with
//! one `[[gnb]]` table per base station). Any key can be overridden from the
//! command line with a dotted path, e.g. `handover.o_prep_db=4` or
//! `gnb.1.x=250`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{dbm_to_watts, Fading, FadingKind, LinkBudget};
use crate::error::{Error, Result};
use crate::fsm::{a3_reduce, A3Variant, MobilityParams, RlfParams};
use crate::mobility::{distance, MobilityMode, Position, Region, VelocityRange};

pub const KMH_PER_MPS: f64 = 3.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub duration_ms: u64,
    pub seed: u64,
    pub n_ues: u32,
    /// Metadata only; the pathloss model has no frequency term.
    pub carrier_ghz: f64,
    /// Metadata only.
    pub bandwidth_mhz: f64,
    /// Enforce the 50–500 m pairwise gNB spacing of the multicell layout.
    #[serde(default)]
    pub enforce_spacing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub fading: FadingKind,
    pub k_factor_db: f64,
    pub pathloss_exponent: f64,
    pub noise_dbm: f64,
    pub antennas: u32,
    /// Distances below this are clamped before the pathloss term.
    pub min_distance_m: f64,
    /// Number of consecutive samples sharing one fading draw (1 = i.i.d. per sample).
    pub coherence_samples: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySection {
    pub mode: MobilityMode,
    pub v_min_mps: f64,
    pub v_max_mps: f64,
    /// Fixed speed for every UE; overrides the `[v_min, v_max]` draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_mps: Option<f64>,
    /// Linear mode: segment start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Position>,
    /// Linear mode: segment end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Position>,
}

impl MobilitySection {
    pub fn velocity_range(&self) -> VelocityRange {
        match self.velocity_mps {
            Some(v) => VelocityRange::fixed(v),
            None => VelocityRange {
                min_mps: self.v_min_mps,
                max_mps: self.v_max_mps,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoverSection {
    pub o_prep_db: f64,
    pub o_exec_db: f64,
    pub t_prep_ms: u32,
    pub t_exec_ms: u32,
    pub t_sample_ms: u32,
    /// Keep the target prepared at `A_n` until execution completes. When
    /// false, WAIT re-selects the strongest neighbor every sample.
    pub pin_target: bool,
}

impl HandoverSection {
    pub fn params(&self) -> MobilityParams {
        MobilityParams {
            o_prep_db: self.o_prep_db,
            o_exec_db: self.o_exec_db,
            t_prep_ms: self.t_prep_ms,
            t_exec_ms: self.t_exec_ms,
            t_sample_ms: self.t_sample_ms,
        }
    }

    pub fn set_params(&mut self, p: &MobilityParams) {
        self.o_prep_db = p.o_prep_db;
        self.o_exec_db = p.o_exec_db;
        self.t_prep_ms = p.t_prep_ms;
        self.t_exec_ms = p.t_exec_ms;
        self.t_sample_ms = p.t_sample_ms;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Samples at or before this time are excluded from metrics (not from traces).
    pub warmup_ms: u64,
    /// Packet arrival rates for the packet-loss estimate, packets/s.
    pub packet_rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnbConfig {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub tx_power_dbm: f64,
}

impl GnbConfig {
    pub fn position(&self) -> Position {
        Position::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: ScenarioSection,
    pub region: Region,
    pub channel: ChannelSection,
    pub mobility: MobilitySection,
    pub handover: HandoverSection,
    pub rlf: RlfParams,
    pub metrics: MetricsSection,
    #[serde(rename = "gnb")]
    pub gnbs: Vec<GnbConfig>,
}

fn default_rlf(t_sample_ms: u32) -> RlfParams {
    RlfParams {
        frame_ms: t_sample_ms,
        ..RlfParams::default()
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(s).map_err(config_parse_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides and re-validates.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Table::try_from(self).expect("config serializes");
        for ov in overrides {
            apply_override(&mut doc, ov.as_ref())?;
        }
        let cfg: SimConfig = toml::Value::Table(doc).try_into().map_err(|e| {
            match config_parse_error(e) {
                // report the full dotted key the user typed
                Error::InvalidConfig { field, reason } => {
                    let full = overrides
                        .iter()
                        .filter_map(|o| o.as_ref().split_once('=').map(|(k, _)| k.trim()))
                        .find(|k| *k == field || k.ends_with(&format!(".{field}")))
                        .map(str::to_string)
                        .unwrap_or(field);
                    Error::InvalidConfig { field: full, reason }
                }
                other => other,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short stable hash of the canonical TOML rendering.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mobility_params(&self) -> MobilityParams {
        self.handover.params()
    }

    pub fn fading(&self) -> Fading {
        Fading::new(self.channel.fading, self.channel.k_factor_db)
    }

    pub fn link_budget(&self, gnb: usize) -> Result<LinkBudget> {
        LinkBudget::new(
            dbm_to_watts(self.gnbs[gnb].tx_power_dbm),
            self.channel.pathloss_exponent,
            dbm_to_watts(self.channel.noise_dbm),
        )
    }

    pub fn ticks(&self) -> u64 {
        self.scenario.duration_ms / u64::from(self.handover.t_sample_ms)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.mobility_params();
        params.validate()?;
        self.rlf.validate()?;
        let t_sample = u64::from(self.handover.t_sample_ms);
        if self.rlf.frame_ms != self.handover.t_sample_ms {
            return Err(Error::config(
                "rlf.frame_ms",
                "the RLF monitor is stepped once per sample; frame_ms must equal handover.t_sample_ms",
            ));
        }
        if self.scenario.duration_ms == 0 || !self.scenario.duration_ms.is_multiple_of(t_sample) {
            return Err(Error::config(
                "scenario.duration_ms",
                format!("must be a positive multiple of t_sample_ms ({t_sample})"),
            ));
        }
        if self.scenario.n_ues == 0 {
            return Err(Error::config("scenario.n_ues", "must be >= 1"));
        }
        if self.gnbs.len() < 2 {
            return Err(Error::config("gnb", "at least two gNBs are required"));
        }
        for (i, g) in self.gnbs.iter().enumerate() {
            if !(g.x.is_finite() && g.y.is_finite() && g.tx_power_dbm.is_finite()) {
                return Err(Error::config(
                    format!("gnb.{i}"),
                    "coordinates and power must be finite",
                ));
            }
            if self.gnbs[..i].iter().any(|o| o.id == g.id) {
                return Err(Error::config(
                    format!("gnb.{i}.id"),
                    format!("duplicate gNB id {}", g.id),
                ));
            }
        }
        if self.scenario.enforce_spacing {
            for i in 0..self.gnbs.len() {
                for j in i + 1..self.gnbs.len() {
                    let d = distance(self.gnbs[i].position(), self.gnbs[j].position());
                    if !(50.0..=500.0).contains(&d) {
                        return Err(Error::config(
                            format!("gnb.{j}"),
                            format!("distance {d:.1} m to gNB {} outside [50, 500] m", self.gnbs[i].id),
                        ));
                    }
                }
            }
        }
        let ch = &self.channel;
        if ch.antennas == 0 {
            return Err(Error::config("channel.antennas", "must be >= 1"));
        }
        if ch.coherence_samples == 0 {
            return Err(Error::config("channel.coherence_samples", "must be >= 1"));
        }
        if !(ch.min_distance_m > 0.0) {
            return Err(Error::config("channel.min_distance_m", "must be > 0"));
        }
        if ch.fading == FadingKind::Rician && !ch.k_factor_db.is_finite() {
            return Err(Error::config("channel.k_factor_db", "must be finite for rician fading"));
        }
        for g in 0..self.gnbs.len() {
            self.link_budget(g)?;
        }
        let mob = &self.mobility;
        let vr = mob.velocity_range();
        if !(vr.min_mps >= 0.0 && vr.max_mps >= vr.min_mps && vr.max_mps.is_finite()) {
            let field = if mob.velocity_mps.is_some() {
                "mobility.velocity_mps"
            } else {
                "mobility.v_max_mps"
            };
            return Err(Error::config(
                field,
                "velocities must satisfy 0 <= v_min <= v_max < inf",
            ));
        }
        match mob.mode {
            MobilityMode::RandomWaypoint => {
                if self.region.is_degenerate() {
                    return Err(Error::config(
                        "region",
                        "random waypoint needs a region with positive area",
                    ));
                }
            }
            MobilityMode::Linear => {
                if mob.start.is_none() {
                    return Err(Error::config("mobility.start", "linear mode needs a start position"));
                }
                if mob.end.is_none() {
                    return Err(Error::config("mobility.end", "linear mode needs an end position"));
                }
                if mob.velocity_mps.is_none() {
                    return Err(Error::config(
                        "mobility.velocity_mps",
                        "linear mode needs a fixed velocity",
                    ));
                }
            }
        }
        for (i, r) in self.metrics.packet_rates.iter().enumerate() {
            if !(r.is_finite() && *r >= 0.0) {
                return Err(Error::config(
                    format!("metrics.packet_rates.{i}"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }

    /// Applies the A3 reduction to the handover section.
    pub fn reduce_to_a3(&mut self, hys_db: f64, ttt_ms: u32, variant: A3Variant) -> Result<()> {
        let p = a3_reduce(&self.mobility_params(), hys_db, ttt_ms, variant)?;
        self.handover.set_params(&p);
        Ok(())
    }
}

fn config_parse_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    // serde reports missing/unknown fields with the key in backticks
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".into());
    Error::config(field, msg)
}

/// Sets `path.to.key` (array elements addressed by index) to a TOML value.
/// Values that do not parse as TOML are taken as bare strings.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let missing = || Error::config(key, "no such key");
    let mut cur: &mut toml::Value = doc.get_mut(parts[0]).ok_or_else(missing)?;
    for (depth, part) in parts.iter().enumerate().skip(1) {
        let last = depth == parts.len() - 1;
        cur = match cur {
            toml::Value::Table(t) => {
                if last && !t.contains_key(*part) {
                    // optional keys absent from the rendering
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.get_mut(*part).ok_or_else(missing)?
            }
            toml::Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| Error::config(key, "array index expected"))?;
                a.get_mut(idx).ok_or_else(missing)?
            }
            _ => return Err(missing()),
        };
    }
    *cur = value;
    Ok(())
}

/// Two gNBs 500 m apart; one UE travels the connecting segment.
pub fn preset_two_gnb(velocity_mps: f64, fading: FadingKind) -> Result<SimConfig> {
    if !(velocity_mps > 0.0) {
        return Err(Error::config("mobility.velocity_mps", "preset needs velocity > 0"));
    }
    let start = Position::new(10.0, 0.0);
    let end = Position::new(490.0, 0.0);
    let t_sample = 20u64;
    let travel_ms = (distance(start, end) / velocity_mps * 1000.0).ceil() as u64;
    let cfg = SimConfig {
        scenario: ScenarioSection {
            name: "two_gnb".into(),
            duration_ms: travel_ms.div_ceil(t_sample) * t_sample,
            seed: 0,
            n_ues: 1,
            carrier_ghz: 28.0,
            bandwidth_mhz: 100.0,
            enforce_spacing: false,
        },
        region: Region {
            x_min: 0.0,
            y_min: -50.0,
            x_max: 500.0,
            y_max: 50.0,
        },
        channel: default_channel(fading),
        mobility: MobilitySection {
            mode: MobilityMode::Linear,
            v_min_mps: velocity_mps,
            v_max_mps: velocity_mps,
            velocity_mps: Some(velocity_mps),
            start: Some(start),
            end: Some(end),
        },
        handover: default_handover(),
        rlf: default_rlf(t_sample as u32),
        metrics: MetricsSection {
            warmup_ms: 0,
            packet_rates: vec![50.0, 100.0, 250.0],
        },
        gnbs: vec![
            GnbConfig {
                id: 0,
                x: 0.0,
                y: 0.0,
                tx_power_dbm: 40.0,
            },
            GnbConfig {
                id: 1,
                x: 500.0,
                y: 0.0,
                tx_power_dbm: 40.0,
            },
        ],
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Multicell layout: 8 gNBs in a 500 × 1000 m area, 20 random-waypoint UEs.
///
/// gNBs sit on a 2 × 4 grid at x ∈ {125, 375}, y ∈ {290, 430, 570, 710}:
/// minimum spacing 140 m, maximum 488.8 m.
pub fn preset_multicell() -> SimConfig {
    let xs = [125.0, 375.0];
    let ys = [290.0, 430.0, 570.0, 710.0];
    let gnbs = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .enumerate()
        .map(|(i, (x, y))| GnbConfig {
            id: i as u32,
            x,
            y,
            tx_power_dbm: 40.0,
        })
        .collect();
    SimConfig {
        scenario: ScenarioSection {
            name: "multicell".into(),
            duration_ms: 120_000,
            seed: 0,
            n_ues: 20,
            carrier_ghz: 28.0,
            bandwidth_mhz: 100.0,
            enforce_spacing: true,
        },
        region: Region::new(500.0, 1000.0),
        channel: default_channel(FadingKind::Rician),
        mobility: MobilitySection {
            mode: MobilityMode::RandomWaypoint,
            v_min_mps: 0.0,
            v_max_mps: 50.0 / KMH_PER_MPS,
            velocity_mps: None,
            start: None,
            end: None,
        },
        handover: default_handover(),
        rlf: default_rlf(20),
        metrics: MetricsSection {
            warmup_ms: 1000,
            packet_rates: vec![50.0, 100.0, 250.0],
        },
        gnbs,
    }
}

/// Three cells 500 m apart on a line; the UE drives from the first to the
/// third at 22 m/s under the A3 reduction (`Hys`, `TTT`).
pub fn preset_a3_linear(hys_db: f64, ttt_ms: u32, fading: FadingKind) -> Result<SimConfig> {
    let v = 22.0;
    let start = Position::new(0.0, 0.0);
    let end = Position::new(1000.0, 0.0);
    let t_sample = 20u64;
    let travel_ms = (distance(start, end) / v * 1000.0).ceil() as u64;
    let mut cfg = SimConfig {
        scenario: ScenarioSection {
            name: "a3_linear".into(),
            duration_ms: travel_ms.div_ceil(t_sample) * t_sample,
            seed: 0,
            n_ues: 1,
            carrier_ghz: 2.12,
            bandwidth_mhz: 20.0,
            enforce_spacing: false,
        },
        region: Region {
            x_min: 0.0,
            y_min: -50.0,
            x_max: 1000.0,
            y_max: 50.0,
        },
        channel: default_channel(fading),
        mobility: MobilitySection {
            mode: MobilityMode::Linear,
            v_min_mps: v,
            v_max_mps: v,
            velocity_mps: Some(v),
            start: Some(start),
            end: Some(end),
        },
        handover: default_handover(),
        rlf: default_rlf(t_sample as u32),
        metrics: MetricsSection {
            warmup_ms: 0,
            packet_rates: vec![50.0, 100.0, 250.0],
        },
        gnbs: (0..3)
            .map(|i| GnbConfig {
                id: i,
                x: 500.0 * f64::from(i),
                y: 0.0,
                tx_power_dbm: 40.0,
            })
            .collect(),
    };
    cfg.reduce_to_a3(hys_db, ttt_ms, A3Variant::PrepOnly)?;
    cfg.validate()?;
    Ok(cfg)
}

fn default_channel(fading: FadingKind) -> ChannelSection {
    ChannelSection {
        fading,
        k_factor_db: 3.0,
        pathloss_exponent: 2.0,
        noise_dbm: -114.0,
        antennas: 1,
        min_distance_m: 1.0,
        coherence_samples: 1,
    }
}

fn default_handover() -> HandoverSection {
    let p = MobilityParams::default();
    HandoverSection {
        o_prep_db: p.o_prep_db,
        o_exec_db: p.o_exec_db,
        t_prep_ms: p.t_prep_ms,
        t_exec_ms: p.t_exec_ms,
        t_sample_ms: p.t_sample_ms,
        pin_target: true,
    }
}
