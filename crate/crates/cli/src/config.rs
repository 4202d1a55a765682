//! Scenario configuration: a sectioned key/value text format with explicit
//! power units, parsed into a validated [`ScenarioConfig`].
//!
//! Power quantities must carry a unit suffix (`mW` or `dBm`); the channel
//! gain accepts `dB` or a bare linear ratio.  Everything is stored in mW
//! internally, and [`ScenarioConfig::to_text`] writes the canonical mW
//! form, so parse → serialize → parse is the identity.

use anyhow::{anyhow, bail, Context, Result};
use deflect_core::mdc::ChannelType;
use deflect_core::model::{circle_positions, NetworkModel};
use deflect_core::oracle::FusionRule;
use deflect_core::sim::{Fading, SimConfig, Tau0Method};

/// Power-constraint regime selected for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Total transmit power budget only.
    Tpc,
    /// Total budget plus per-sensor caps.
    Tipc,
    /// Per-sensor caps only.
    Ipc,
}

impl Regime {
    /// Lower-case label used in config files and CSV columns.
    pub fn label(self) -> &'static str {
        match self {
            Regime::Tpc => "tpc",
            Regime::Tipc => "tipc",
            Regime::Ipc => "ipc",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tpc" => Some(Regime::Tpc),
            "tipc" => Some(Regime::Tipc),
            "ipc" => Some(Regime::Ipc),
            _ => None,
        }
    }
}

/// Kind of experiment a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Mean maximized deflection versus total budget.
    MdcVsPtot,
    /// Simulated global detection/false-alarm rates versus total budget.
    Pd0VsPtot,
    /// Mean maximized deflection versus a uniform per-sensor cap.
    MdcVsP0,
    /// Per-sensor power profile at fixed budgets (no fading).
    PowerProfile,
    /// Two-sensor brute-force detection-optimal allocation versus budget.
    OpaCompare,
}

impl SweepKind {
    /// Lower-case label used in config files and output file names.
    pub fn label(self) -> &'static str {
        match self {
            SweepKind::MdcVsPtot => "mdc_vs_ptot",
            SweepKind::Pd0VsPtot => "pd0_vs_ptot",
            SweepKind::MdcVsP0 => "mdc_vs_p0",
            SweepKind::PowerProfile => "power_profile",
            SweepKind::OpaCompare => "opa_compare",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "mdc_vs_ptot" => Some(SweepKind::MdcVsPtot),
            "pd0_vs_ptot" => Some(SweepKind::Pd0VsPtot),
            "mdc_vs_p0" => Some(SweepKind::MdcVsP0),
            "power_profile" => Some(SweepKind::PowerProfile),
            "opa_compare" => Some(SweepKind::OpaCompare),
            _ => None,
        }
    }
}

/// What to sweep and over which constraint regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Experiment family.
    pub kind: SweepKind,
    /// Regimes to produce (one output file each).
    pub regimes: Vec<Regime>,
    /// Total-power axis (mW); used by every kind except `mdc_vs_p0`.
    pub p_tot_mw: Vec<f64>,
    /// Uniform per-sensor cap axis (mW) for `mdc_vs_p0` and the `ipc`
    /// rows of `power_profile`.
    pub p0_axis_mw: Vec<f64>,
    /// Fixed per-sensor caps (mW) for the `tipc` regime: one value for
    /// uniform caps or one per sensor.
    pub caps_mw: Vec<f64>,
    /// Fusion rule for `opa_compare`.
    pub rule: FusionRule,
}

/// Monte-Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    /// Independent channel realizations.
    pub realizations: usize,
    /// Trials per hypothesis per realization.
    pub trials: usize,
    /// Master seed (`--seed` overrides).
    pub seed: u64,
    /// Global false-alarm budget.
    pub beta_f: f64,
    /// Fusion-threshold calibration method.
    pub tau0: Tau0Method,
    /// Reporting-channel fading model.
    pub fading: Fading,
}

/// A fully parsed and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Sensor positions (m).
    pub sensors: Vec<[f64; 3]>,
    /// Source position (m).
    pub source: [f64; 3],
    /// Fusion-center position (m).
    pub fusion_center: [f64; 3],
    /// Source power at 1 m (mW).
    pub sigma_s_sq_mw: f64,
    /// Sensing path-loss exponent.
    pub eps_s: f64,
    /// Local observation noise power (mW).
    pub sigma0_sq_mw: f64,
    /// Spatial correlation bases to sweep.
    pub rho: Vec<f64>,
    /// Local false-alarm target.
    pub pf_target: f64,
    /// Reporting-channel gain at 1 m (linear).
    pub gain: f64,
    /// Reporting path-loss exponent.
    pub eps_c: f64,
    /// Reporting-channel noise power (mW).
    pub sigma_n_sq_mw: f64,
    /// Channel models to sweep.
    pub channels: Vec<ChannelType>,
    /// Sweep definition.
    pub sweep: SweepSpec,
    /// Monte-Carlo settings.
    pub sim: SimSettings,
}

/// One `key = value` occurrence with its source line for error anchoring.
struct RawEntry {
    section: &'static str,
    key: String,
    value: String,
    line: usize,
    used: bool,
}

const SECTIONS: [&str; 5] = ["geometry", "sensing", "comm", "sweep", "sim"];

impl ScenarioConfig {
    /// Parses and validates a config text.  Errors name the offending
    /// line where one exists.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<RawEntry> = Vec::new();
        let mut section: Option<&'static str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find(['#', ';']) {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|&&s| s == name)
                        .copied()
                        .ok_or_else(|| {
                            anyhow!(
                                "line {line_no}: unknown section [{name}] (expected one of {})",
                                SECTIONS.join(", ")
                            )
                        })?,
                );
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {line_no}: expected 'key = value' or '[section]', got '{line}'");
            };
            let Some(section) = section else {
                bail!("line {line_no}: key before any [section] header");
            };
            entries.push(RawEntry {
                section,
                key: key.trim().to_string(),
                value: value.trim().to_string(),
                line: line_no,
                used: false,
            });
        }
        let cfg = build(&mut entries)?;
        if let Some(stray) = entries.iter().find(|e| !e.used) {
            bail!(
                "line {}: unknown key '{}' in section [{}]",
                stray.line,
                stray.key,
                stray.section
            );
        }
        cfg.validate_semantics()?;
        Ok(cfg)
    }

    /// Canonical serialization: explicit sensor list, all powers in mW,
    /// full float precision.  `parse(to_text(parse(x)))` equals
    /// `parse(x)`.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let triple = |p: &[f64; 3]| format!("{:?}, {:?}, {:?}", p[0], p[1], p[2]);
        let floats = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let powers = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?} mW"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        writeln!(s, "[geometry]").unwrap();
        for p in &self.sensors {
            writeln!(s, "sensor = {}", triple(p)).unwrap();
        }
        writeln!(s, "source = {}", triple(&self.source)).unwrap();
        writeln!(s, "fusion_center = {}", triple(&self.fusion_center)).unwrap();
        writeln!(s, "\n[sensing]").unwrap();
        writeln!(s, "sigma_s_sq = {:?} mW", self.sigma_s_sq_mw).unwrap();
        writeln!(s, "eps_s = {:?}", self.eps_s).unwrap();
        writeln!(s, "sigma0_sq = {:?} mW", self.sigma0_sq_mw).unwrap();
        writeln!(s, "rho = {}", floats(&self.rho)).unwrap();
        writeln!(s, "pf_target = {:?}", self.pf_target).unwrap();
        writeln!(s, "\n[comm]").unwrap();
        writeln!(s, "gain = {:?}", self.gain).unwrap();
        writeln!(s, "eps_c = {:?}", self.eps_c).unwrap();
        writeln!(s, "sigma_n_sq = {:?} mW", self.sigma_n_sq_mw).unwrap();
        let channel = match self.channels.as_slice() {
            [ChannelType::Pac] => "pac",
            [ChannelType::Mac] => "mac",
            _ => "both",
        };
        writeln!(s, "channel = {channel}").unwrap();
        writeln!(s, "\n[sweep]").unwrap();
        writeln!(s, "kind = {}", self.sweep.kind.label()).unwrap();
        writeln!(
            s,
            "regimes = {}",
            self.sweep
                .regimes
                .iter()
                .map(|r| r.label())
                .collect::<Vec<_>>()
                .join(", ")
        )
        .unwrap();
        if !self.sweep.p_tot_mw.is_empty() {
            writeln!(s, "p_tot = {}", powers(&self.sweep.p_tot_mw)).unwrap();
        }
        if !self.sweep.p0_axis_mw.is_empty() {
            writeln!(s, "p0 = {}", powers(&self.sweep.p0_axis_mw)).unwrap();
        }
        if !self.sweep.caps_mw.is_empty() {
            writeln!(s, "caps = {}", powers(&self.sweep.caps_mw)).unwrap();
        }
        if self.sweep.kind == SweepKind::OpaCompare {
            let rule = match self.sweep.rule {
                FusionRule::Linear => "linear",
                FusionRule::Lrt => "lrt",
            };
            writeln!(s, "rule = {rule}").unwrap();
        }
        writeln!(s, "\n[sim]").unwrap();
        writeln!(s, "realizations = {}", self.sim.realizations).unwrap();
        writeln!(s, "trials = {}", self.sim.trials).unwrap();
        writeln!(s, "seed = {}", self.sim.seed).unwrap();
        writeln!(s, "beta_f = {:?}", self.sim.beta_f).unwrap();
        let tau0 = match self.sim.tau0 {
            Tau0Method::EmpiricalQuantile => "empirical",
            Tau0Method::GaussianApprox => "gaussian",
        };
        writeln!(s, "tau0 = {tau0}").unwrap();
        let fading = match self.sim.fading {
            Fading::RayleighCn01 => "rayleigh",
            Fading::UnitGain => "unit",
        };
        writeln!(s, "fading = {fading}").unwrap();
        s
    }

    /// Physical network at one correlation base.
    pub fn network_model(&self, rho: f64) -> NetworkModel {
        NetworkModel {
            sensors: self.sensors.clone(),
            source: self.source,
            fusion_center: self.fusion_center,
            sigma_s_sq: self.sigma_s_sq_mw,
            eps_s: self.eps_s,
            sigma0_sq: self.sigma0_sq_mw,
            rho,
            pf_target: self.pf_target,
            gain: self.gain,
            eps_c: self.eps_c,
            sigma_n_sq: self.sigma_n_sq_mw,
        }
    }

    /// Per-sensor caps resolved to the network size.
    pub fn caps_vector(&self) -> Vec<f64> {
        let m = self.sensors.len();
        if self.sweep.caps_mw.len() == 1 {
            vec![self.sweep.caps_mw[0]; m]
        } else {
            self.sweep.caps_mw.clone()
        }
    }

    /// Monte-Carlo settings in the simulator's own type.
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            n_channel_realizations: self.sim.realizations,
            n_monte_carlo_per_realization: self.sim.trials,
            seed,
            fading: self.sim.fading,
            beta_f: self.sim.beta_f,
            tau0_method: self.sim.tau0,
        }
    }

    fn validate_semantics(&self) -> Result<()> {
        let m = self.sensors.len();
        for &rho in &self.rho {
            if !(0.0..=1.0).contains(&rho) {
                bail!("rho = {rho} outside [0, 1]");
            }
            self.network_model(rho)
                .validated()
                .map_err(|e| anyhow!("physical model rejected: {e}"))?;
        }
        if self.rho.is_empty() {
            bail!("[sensing] rho list is empty");
        }
        if self.channels.is_empty() {
            bail!("[comm] channel list is empty");
        }
        if self.sweep.regimes.is_empty() {
            bail!("[sweep] regimes is empty");
        }
        if self.sim.realizations == 0 || self.sim.trials == 0 {
            bail!("[sim] realizations and trials must be at least 1");
        }
        if !(self.sim.beta_f > 0.0 && self.sim.beta_f < 1.0) {
            bail!("[sim] beta_f must lie in (0, 1), got {}", self.sim.beta_f);
        }
        for (name, list) in [
            ("p_tot", &self.sweep.p_tot_mw),
            ("p0", &self.sweep.p0_axis_mw),
            ("caps", &self.sweep.caps_mw),
        ] {
            if list.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                bail!("[sweep] {name} values must be positive and finite");
            }
        }
        if !self.sweep.caps_mw.is_empty() && ![1, m].contains(&self.sweep.caps_mw.len()) {
            bail!(
                "[sweep] caps needs 1 value (uniform) or {m} (one per sensor), got {}",
                self.sweep.caps_mw.len()
            );
        }
        let needs_budget = |list: &Vec<f64>, what: &str| -> Result<()> {
            if list.is_empty() {
                bail!("[sweep] {} sweep needs a non-empty {what} grid", self.sweep.kind.label());
            }
            Ok(())
        };
        let tipc_caps_ok = |budgets: &[f64]| -> Result<()> {
            if self.sweep.caps_mw.is_empty() {
                bail!("[sweep] the tipc regime needs caps");
            }
            let caps = self.caps_vector();
            let total: f64 = caps.iter().sum();
            let min_cap = caps.iter().cloned().fold(f64::INFINITY, f64::min);
            for &p in budgets {
                if p >= total {
                    bail!(
                        "[sweep] tipc budget {p} mW is not below the cap total {total} mW; \
                         the combined regime needs a binding budget"
                    );
                }
                if p / m as f64 > min_cap {
                    bail!(
                        "[sweep] tipc budget {p} mW breaks the uniform reference split: \
                         {p}/{m} mW exceeds the smallest cap {min_cap} mW"
                    );
                }
            }
            Ok(())
        };
        match self.sweep.kind {
            SweepKind::MdcVsPtot | SweepKind::Pd0VsPtot => {
                needs_budget(&self.sweep.p_tot_mw, "p_tot")?;
                for &r in &self.sweep.regimes {
                    match r {
                        Regime::Tpc => {}
                        Regime::Tipc => tipc_caps_ok(&self.sweep.p_tot_mw)?,
                        Regime::Ipc => bail!(
                            "[sweep] the ipc regime has no total-power axis; use kind = mdc_vs_p0"
                        ),
                    }
                }
            }
            SweepKind::MdcVsP0 => {
                needs_budget(&self.sweep.p0_axis_mw, "p0")?;
                if self.sweep.regimes != [Regime::Ipc] {
                    bail!("[sweep] mdc_vs_p0 sweeps exactly the ipc regime (regimes = ipc)");
                }
            }
            SweepKind::PowerProfile => {
                for &r in &self.sweep.regimes {
                    match r {
                        Regime::Tpc => needs_budget(&self.sweep.p_tot_mw, "p_tot")?,
                        Regime::Tipc => {
                            needs_budget(&self.sweep.p_tot_mw, "p_tot")?;
                            tipc_caps_ok(&self.sweep.p_tot_mw)?;
                        }
                        Regime::Ipc => needs_budget(&self.sweep.p0_axis_mw, "p0")?,
                    }
                }
            }
            SweepKind::OpaCompare => {
                needs_budget(&self.sweep.p_tot_mw, "p_tot")?;
                if m != 2 {
                    bail!("[sweep] opa_compare needs exactly 2 sensors, got {m}");
                }
                if self.sweep.regimes != [Regime::Tpc] {
                    bail!("[sweep] opa_compare searches the total-power simplex (regimes = tpc)");
                }
            }
        }
        Ok(())
    }
}

fn build(entries: &mut [RawEntry]) -> Result<ScenarioConfig> {
    let mut sensors = Vec::new();
    let mut count: Option<usize> = None;
    let mut diameter: Option<f64> = None;
    for e in entries.iter_mut() {
        if e.section == "geometry" {
            match e.key.as_str() {
                "sensor" => {
                    sensors.push(parse_triple(&e.value, e.line)?);
                    e.used = true;
                }
                "count" => {
                    take_once(&mut count, parse_usize(&e.value, e.line)?, "count", e.line)?;
                    e.used = true;
                }
                "diameter_m" => {
                    take_once(&mut diameter, parse_f64(&e.value, e.line)?, "diameter_m", e.line)?;
                    e.used = true;
                }
                _ => {}
            }
        }
    }
    match (sensors.is_empty(), count, diameter) {
        (false, Some(_), _) | (false, _, Some(_)) => {
            bail!("[geometry] give either explicit sensor lines or count/diameter_m, not both")
        }
        (true, Some(n), Some(d)) => sensors = circle_positions(n, d),
        (true, _, _) => bail!(
            "[geometry] needs sensor positions: explicit 'sensor = x, y, z' lines \
             or 'count' plus 'diameter_m' for a circle"
        ),
        _ => {}
    }
    if sensors.is_empty() {
        bail!("[geometry] resolved to zero sensors");
    }

    let source = {
        let (v, l) = take_req(entries, "geometry", "source")?;
        parse_triple(&v, l)?
    };
    let fusion_center = {
        let (v, l) = take_req(entries, "geometry", "fusion_center")?;
        parse_triple(&v, l)?
    };
    let sigma_s_sq_mw = {
        let (v, l) = take_req(entries, "sensing", "sigma_s_sq")?;
        parse_power(&v, l)?
    };
    let eps_s = {
        let (v, l) = take_req(entries, "sensing", "eps_s")?;
        parse_f64(&v, l)?
    };
    let sigma0_sq_mw = {
        let (v, l) = take_req(entries, "sensing", "sigma0_sq")?;
        parse_power(&v, l)?
    };
    let rho = {
        let (v, l) = take_req(entries, "sensing", "rho")?;
        parse_f64_list(&v, l)?
    };
    let pf_target = {
        let (v, l) = take_req(entries, "sensing", "pf_target")?;
        parse_f64(&v, l)?
    };
    let gain = {
        let (v, l) = take_req(entries, "comm", "gain")?;
        parse_gain(&v, l)?
    };
    let eps_c = {
        let (v, l) = take_req(entries, "comm", "eps_c")?;
        parse_f64(&v, l)?
    };
    let sigma_n_sq_mw = {
        let (v, l) = take_req(entries, "comm", "sigma_n_sq")?;
        parse_power(&v, l)?
    };
    let channels = {
        let (v, l) = take_req(entries, "comm", "channel")?;
        match v.as_str() {
            "pac" => vec![ChannelType::Pac],
            "mac" => vec![ChannelType::Mac],
            "both" => vec![ChannelType::Pac, ChannelType::Mac],
            other => bail!("line {l}: channel must be pac, mac, or both, got '{other}'"),
        }
    };
    let kind = {
        let (v, l) = take_req(entries, "sweep", "kind")?;
        SweepKind::parse(&v).ok_or_else(|| {
            anyhow!(
                "line {l}: unknown sweep kind '{v}' (expected mdc_vs_ptot, pd0_vs_ptot, \
                 mdc_vs_p0, power_profile, or opa_compare)"
            )
        })?
    };
    let regimes = {
        let (v, l) = take_req(entries, "sweep", "regimes")?;
        let mut out = Vec::new();
        for part in v.split(',') {
            let part = part.trim();
            let r = Regime::parse(part)
                .ok_or_else(|| anyhow!("line {l}: unknown regime '{part}'"))?;
            if out.contains(&r) {
                bail!("line {l}: regime '{part}' listed twice");
            }
            out.push(r);
        }
        out
    };
    let p_tot_mw = match take_one(entries, "sweep", "p_tot")? {
        Some((v, l)) => parse_power_list(&v, l)?,
        None => Vec::new(),
    };
    let p0_axis_mw = match take_one(entries, "sweep", "p0")? {
        Some((v, l)) => parse_power_list(&v, l)?,
        None => Vec::new(),
    };
    let caps_mw = match take_one(entries, "sweep", "caps")? {
        Some((v, l)) => parse_power_list(&v, l)?,
        None => Vec::new(),
    };
    let rule = match take_one(entries, "sweep", "rule")? {
        Some((v, l)) => match v.as_str() {
            "linear" => FusionRule::Linear,
            "lrt" => FusionRule::Lrt,
            other => bail!("line {l}: rule must be linear or lrt, got '{other}'"),
        },
        None => FusionRule::Linear,
    };
    let realizations = {
        let (v, l) = take_req(entries, "sim", "realizations")?;
        parse_usize(&v, l)?
    };
    let trials = {
        let (v, l) = take_req(entries, "sim", "trials")?;
        parse_usize(&v, l)?
    };
    let seed = {
        let (v, l) = take_req(entries, "sim", "seed")?;
        v.parse::<u64>()
            .with_context(|| format!("line {l}: seed must be a nonnegative integer"))?
    };
    let beta_f = {
        let (v, l) = take_req(entries, "sim", "beta_f")?;
        parse_f64(&v, l)?
    };
    let tau0 = {
        let (v, l) = take_req(entries, "sim", "tau0")?;
        match v.as_str() {
            "empirical" => Tau0Method::EmpiricalQuantile,
            "gaussian" => Tau0Method::GaussianApprox,
            other => bail!("line {l}: tau0 must be empirical or gaussian, got '{other}'"),
        }
    };
    let fading = {
        let (v, l) = take_req(entries, "sim", "fading")?;
        match v.as_str() {
            "rayleigh" => Fading::RayleighCn01,
            "unit" => Fading::UnitGain,
            other => bail!("line {l}: fading must be rayleigh or unit, got '{other}'"),
        }
    };

    Ok(ScenarioConfig {
        sensors,
        source,
        fusion_center,
        sigma_s_sq_mw,
        eps_s,
        sigma0_sq_mw,
        rho,
        pf_target,
        gain,
        eps_c,
        sigma_n_sq_mw,
        channels,
        sweep: SweepSpec {
            kind,
            regimes,
            p_tot_mw,
            p0_axis_mw,
            caps_mw,
            rule,
        },
        sim: SimSettings {
            realizations,
            trials,
            seed,
            beta_f,
            tau0,
            fading,
        },
    })
}

/// Consumes the single occurrence of `key` in `section`, if present.
fn take_one(
    entries: &mut [RawEntry],
    section: &str,
    key: &str,
) -> Result<Option<(String, usize)>> {
    let mut found: Option<(String, usize)> = None;
    for e in entries.iter_mut() {
        if e.section == section && e.key == key {
            if found.is_some() {
                bail!("line {}: duplicate key '{key}' in [{section}]", e.line);
            }
            found = Some((e.value.clone(), e.line));
            e.used = true;
        }
    }
    Ok(found)
}

/// Like [`take_one`] but the key is mandatory.
fn take_req(entries: &mut [RawEntry], section: &str, key: &str) -> Result<(String, usize)> {
    take_one(entries, section, key)?
        .ok_or_else(|| anyhow!("missing required key '{key}' in section [{section}]"))
}

fn take_once<T>(slot: &mut Option<T>, value: T, key: &str, line: usize) -> Result<()> {
    if slot.is_some() {
        bail!("line {line}: duplicate key '{key}'");
    }
    *slot = Some(value);
    Ok(())
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .with_context(|| format!("line {line}: expected a number, got '{s}'"))
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse::<usize>()
        .with_context(|| format!("line {line}: expected a nonnegative integer, got '{s}'"))
}

fn parse_f64_list(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split(',').map(|p| parse_f64(p.trim(), line)).collect()
}

fn parse_triple(s: &str, line: usize) -> Result<[f64; 3]> {
    let parts = parse_f64_list(s, line)?;
    let [x, y, z] = parts.as_slice() else {
        bail!("line {line}: expected 'x, y, z', got '{s}'");
    };
    Ok([*x, *y, *z])
}

/// A power value with a mandatory unit: `<v> mW` or `<v> dBm`.
fn parse_power(s: &str, line: usize) -> Result<f64> {
    let mut it = s.split_whitespace();
    let (Some(num), Some(unit), None) = (it.next(), it.next(), it.next()) else {
        bail!("line {line}: power '{s}' needs an explicit unit: '<value> mW' or '<value> dBm'");
    };
    let v = parse_f64(num, line)?;
    match unit {
        "mW" => Ok(v),
        "dBm" => Ok(10f64.powf(v / 10.0)),
        other => bail!("line {line}: unknown power unit '{other}' (use mW or dBm)"),
    }
}

fn parse_power_list(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split(',').map(|p| parse_power(p.trim(), line)).collect()
}

/// A gain ratio: bare linear value or `<v> dB`.
fn parse_gain(s: &str, line: usize) -> Result<f64> {
    let mut it = s.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(num), None, _) => parse_f64(num, line),
        (Some(num), Some("dB"), None) => Ok(10f64.powf(parse_f64(num, line)? / 10.0)),
        _ => bail!("line {line}: gain '{s}' must be a linear ratio or '<value> dB'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind_lines: &str) -> String {
        format!(
            "[geometry]\ncount = 4\ndiameter_m = 5.0\nsource = 0, 0, 3\n\
             fusion_center = 0, 0, -10\n\n[sensing]\nsigma_s_sq = 2e-5 mW\neps_s = 2\n\
             sigma0_sq = -70 dBm\nrho = 0.1\npf_target = 0.1\n\n[comm]\ngain = -55 dB\n\
             eps_c = 2\nsigma_n_sq = 1e-7 mW\nchannel = pac\n\n[sweep]\n{kind_lines}\n\n\
             [sim]\nrealizations = 4\ntrials = 200\nseed = 1\nbeta_f = 0.1\n\
             tau0 = empirical\nfading = rayleigh\n"
        )
    }

    #[test]
    fn units_normalize_to_milliwatts() {
        let cfg =
            ScenarioConfig::parse(&minimal("kind = mdc_vs_ptot\nregimes = tpc\np_tot = 0 dBm"))
                .unwrap();
        assert!((cfg.sigma0_sq_mw - 1e-7).abs() < 1e-20, "dBm conversion");
        assert!((cfg.gain - 10f64.powf(-5.5)).abs() < 1e-12, "dB conversion");
        assert!((cfg.sweep.p_tot_mw[0] - 1.0).abs() < 1e-15, "0 dBm is 1 mW");
    }

    #[test]
    fn power_without_unit_is_rejected_with_line() {
        let text = minimal("kind = mdc_vs_ptot\nregimes = tpc\np_tot = 1.0");
        let err = ScenarioConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("needs an explicit unit"), "{err}");
        assert!(err.contains("line "), "{err}");
    }

    #[test]
    fn unknown_key_is_anchored_to_its_line() {
        let text = minimal("kind = mdc_vs_ptot\nregimes = tpc\np_tot = 1 mW\nbogus = 3");
        let err = ScenarioConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("unknown key 'bogus'"), "{err}");
    }

    #[test]
    fn empty_sweep_grid_is_rejected() {
        let err = ScenarioConfig::parse(&minimal("kind = mdc_vs_ptot\nregimes = tpc"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("non-empty p_tot grid"), "{err}");
    }

    #[test]
    fn ipc_regime_rejects_total_power_axis() {
        let err = ScenarioConfig::parse(&minimal(
            "kind = mdc_vs_ptot\nregimes = ipc\np_tot = 1 mW",
        ))
        .unwrap_err()
        .to_string();
        assert!(err.contains("mdc_vs_p0"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        let text = minimal(
            "kind = pd0_vs_ptot\nregimes = tpc, tipc\np_tot = -10 dBm, 1 mW\ncaps = 0.9 mW",
        );
        let cfg = ScenarioConfig::parse(&text).unwrap();
        let cfg2 = ScenarioConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn explicit_sensors_conflict_with_circle() {
        let text = minimal("kind = mdc_vs_ptot\nregimes = tpc\np_tot = 1 mW")
            .replace("count = 4", "count = 4\nsensor = 1, 0, 0");
        let err = ScenarioConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("not both"), "{err}");
    }
}
