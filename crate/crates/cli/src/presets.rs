//! Built-in scenario presets.
//!
//! Each preset is a complete config text that parses as-is, so `preset
//! <name> > my.conf` followed by `run my.conf` reproduces a canned
//! experiment.  The source power 2.0026625e-5 mW is calibrated so the
//! symmetric 8-sensor circle (diameter 5 m, source 3 m above the center,
//! observation noise -70 dBm) operates at a local detection probability
//! near 0.5 for a false-alarm target of 0.1.

/// Preset names with one-line descriptions, in listing order.
pub const PRESETS: [(&str, &str); 4] = [
    (
        "symmetric-circle",
        "8-sensor symmetric circle: mean maximized deflection vs total budget, \
         both channels, correlation 0.1 and 0.9",
    ),
    (
        "offset-source",
        "8-sensor circle with the source above sensor 1: per-sensor power \
         profiles in all three regimes",
    ),
    (
        "two-sensor-splits",
        "two heterogeneous sensors: brute-force detection-optimal allocation \
         vs the deflection-based and even splits",
    ),
    (
        "quick-smoke",
        "small 3-sensor detection sweep that finishes in seconds; handy for \
         determinism checks",
    ),
];

/// Returns the config text for `name`, or `None` for an unknown preset.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "symmetric-circle" => Some(SYMMETRIC_CIRCLE),
        "offset-source" => Some(OFFSET_SOURCE),
        "two-sensor-splits" => Some(TWO_SENSOR_SPLITS),
        "quick-smoke" => Some(QUICK_SMOKE),
        _ => None,
    }
}

const SYMMETRIC_CIRCLE: &str = "\
# Symmetric scenario: sensors on a circle of diameter 5 m, source on the
# circle axis, fusion center 10 m below the ground plane.
[geometry]
count = 8
diameter_m = 5.0
source = 0.0, 0.0, 3.0
fusion_center = 0.0, 0.0, -10.0

[sensing]
sigma_s_sq = 2.0026625e-5 mW
eps_s = 2.0
sigma0_sq = -70 dBm
rho = 0.1, 0.9
pf_target = 0.1

[comm]
gain = -55 dB
eps_c = 2.0
sigma_n_sq = -70 dBm
channel = both

[sweep]
kind = mdc_vs_ptot
regimes = tpc
p_tot = -10 dBm, -5 dBm, 0 dBm, 5 dBm, 10 dBm, 15 dBm, 20 dBm, 25 dBm

[sim]
realizations = 1000
trials = 1000
seed = 42
beta_f = 0.1
tau0 = empirical
fading = rayleigh
";

const OFFSET_SOURCE: &str = "\
# Source directly above sensor 1: heterogeneous local detection rates, so
# the power profiles show how each regime ranks the sensors.
[geometry]
count = 8
diameter_m = 5.0
source = 2.5, 0.0, 3.0
fusion_center = 0.0, 0.0, -10.0

[sensing]
sigma_s_sq = 2.0026625e-5 mW
eps_s = 2.0
sigma0_sq = -70 dBm
rho = 0.1
pf_target = 0.1

[comm]
gain = -55 dB
eps_c = 2.0
sigma_n_sq = -70 dBm
channel = both

[sweep]
kind = power_profile
regimes = tpc, tipc, ipc
p_tot = 0 dBm, 15 dBm
caps = 12.0 mW
p0 = 0.5 mW, 5.0 mW

[sim]
realizations = 1
trials = 1
seed = 42
beta_f = 0.1
tau0 = empirical
fading = unit

";

const TWO_SENSOR_SPLITS: &str = "\
# Two sensors at opposite ends of the circle diameter with the source above
# the first: compares the brute-force detection-optimal split against the
# deflection-based and even splits on a parallel-access channel.
[geometry]
sensor = 2.5, 0.0, 0.0
sensor = -2.5, 0.0, 0.0
source = 2.5, 0.0, 3.0
fusion_center = 0.0, 0.0, -10.0

[sensing]
sigma_s_sq = 2.0026625e-5 mW
eps_s = 2.0
sigma0_sq = -70 dBm
rho = 0.1
pf_target = 0.1

[comm]
gain = -55 dB
eps_c = 2.0
sigma_n_sq = -70 dBm
channel = pac

[sweep]
kind = opa_compare
regimes = tpc
p_tot = 0 dBm, 3 dBm, 6 dBm, 9 dBm, 12 dBm, 15 dBm, 18 dBm, 21 dBm, 24 dBm, 27 dBm
rule = linear

[sim]
realizations = 1
trials = 100000
seed = 42
beta_f = 0.1
tau0 = empirical
fading = unit
";

const QUICK_SMOKE: &str = "\
# Three sensors, a slightly offset source, and small Monte-Carlo counts:
# finishes in seconds while exercising the full detection pipeline.
[geometry]
count = 3
diameter_m = 5.0
source = 0.5, 0.0, 3.0
fusion_center = 0.0, 0.0, -10.0

[sensing]
sigma_s_sq = 2.0026625e-5 mW
eps_s = 2.0
sigma0_sq = -70 dBm
rho = 0.1
pf_target = 0.1

[comm]
gain = -55 dB
eps_c = 2.0
sigma_n_sq = -70 dBm
channel = pac

[sweep]
kind = pd0_vs_ptot
regimes = tpc
p_tot = 5 dBm, 15 dBm

[sim]
realizations = 6
trials = 400
seed = 7
beta_f = 0.1
tau0 = empirical
fading = rayleigh
";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    #[test]
    fn every_preset_parses_and_round_trips() {
        for (name, _) in PRESETS {
            let text = preset(name).expect("registered preset");
            let cfg = ScenarioConfig::parse(text)
                .unwrap_or_else(|e| panic!("preset {name} failed to parse: {e:#}"));
            let again = ScenarioConfig::parse(&cfg.to_text())
                .unwrap_or_else(|e| panic!("preset {name} failed to re-parse: {e:#}"));
            assert_eq!(cfg, again, "round trip changed preset {name}");
        }
    }

    #[test]
    fn unknown_preset_is_none() {
        assert!(preset("nope").is_none());
    }
}
