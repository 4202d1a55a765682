//! Executes a parsed scenario: one CSV per (channel, correlation, regime)
//! combination, with deterministic row order and explicit float
//! formatting so identical configs and seeds produce byte-identical
//! files.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DVector;
use rayon::prelude::*;

use deflect_core::mdc::{build_mdc_form, mdc_value, ChannelType, MdcForm};
use deflect_core::model::{ChannelRealization, LocalStats, NetworkModel};
use deflect_core::oracle::brute_force_opa_2sensor;
use deflect_core::sim::{derive_rng, draw_channel, estimate_performance, AllocationPolicy};
use deflect_core::solvers::{self, uniform_allocation, ConstraintSet};

use crate::config::{Regime, ScenarioConfig, SweepKind};

/// Runs every (channel, correlation, regime) combination of the scenario
/// and returns the paths of the CSV files written under `out_dir`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Vec<PathBuf>> {
    let seed = seed_override.unwrap_or(cfg.sim.seed);
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut files = Vec::new();
    for &channel in &cfg.channels {
        for &rho in &cfg.rho {
            for &regime in &cfg.sweep.regimes {
                let name = format!(
                    "{}_{}_rho{}_{}.csv",
                    cfg.sweep.kind.label(),
                    channel_label(channel),
                    rho,
                    regime.label()
                );
                let path = out_dir.join(&name);
                let rows = sweep_rows(cfg, channel, rho, regime, seed)
                    .with_context(|| format!("computing {name}"))?;
                write_csv(&path, header(cfg.sweep.kind), &rows)
                    .with_context(|| format!("writing {}", path.display()))?;
                files.push(path);
            }
        }
    }
    Ok(files)
}

fn channel_label(ch: ChannelType) -> &'static str {
    match ch {
        ChannelType::Pac => "pac",
        ChannelType::Mac => "mac",
    }
}

fn header(kind: SweepKind) -> &'static [&'static str] {
    match kind {
        SweepKind::MdcVsPtot => &["budget_mw", "mdc_dpa_mean", "mdc_upa_mean"],
        SweepKind::MdcVsP0 => &["cap_mw", "mdc_dpa_mean", "mdc_upa_mean"],
        SweepKind::Pd0VsPtot => &[
            "budget_mw",
            "pd0_dpa",
            "pf0_dpa",
            "pd0_stderr_dpa",
            "mdc_dpa_mean",
            "pd0_upa",
            "pf0_upa",
            "pd0_stderr_upa",
            "mdc_upa_mean",
        ],
        SweepKind::PowerProfile => &[
            "sensor_index",
            "p_d",
            "pathloss_theta",
            "regime",
            "budget",
            "power_mw",
        ],
        SweepKind::OpaCompare => &[
            "budget_mw",
            "pd0_opa",
            "pd0_dpa",
            "pd0_upa",
            "opa_split_frac",
            "dpa_split_frac",
            "pd0_stderr",
        ],
    }
}

/// Fixed-format float cell: every value goes through the same formatter so
/// output bytes depend only on the numbers.
fn cell(x: f64) -> String {
    format!("{x:.12e}")
}

fn constraints_for(regime: Regime, p_tot: f64, caps: &[f64]) -> ConstraintSet {
    match regime {
        Regime::Tpc => ConstraintSet::TotalPower { p_tot },
        Regime::Tipc => ConstraintSet::TotalWithCaps {
            p_tot,
            p0: DVector::from_row_slice(caps),
        },
        Regime::Ipc => ConstraintSet::CapsOnly {
            p0: DVector::from_row_slice(caps),
        },
    }
}

fn sweep_rows(
    cfg: &ScenarioConfig,
    channel: ChannelType,
    rho: f64,
    regime: Regime,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let model = cfg.network_model(rho).validated()?;
    let stats = LocalStats::from_model(&model)?;
    let theta = model.pathloss_vector()?;
    let caps = cfg.caps_vector();
    let mut rows = Vec::new();
    match cfg.sweep.kind {
        SweepKind::MdcVsPtot => {
            for &p_tot in &cfg.sweep.p_tot_mw {
                let constraints = constraints_for(regime, p_tot, &caps);
                let (dpa, upa) = mean_mdc(cfg, &model, &stats, &theta, &constraints, channel, seed)?;
                rows.push(vec![cell(p_tot), cell(dpa), cell(upa)]);
            }
        }
        SweepKind::MdcVsP0 => {
            for &cap in &cfg.sweep.p0_axis_mw {
                let uniform = vec![cap; model.num_sensors()];
                let constraints = constraints_for(regime, 0.0, &uniform);
                let (dpa, upa) = mean_mdc(cfg, &model, &stats, &theta, &constraints, channel, seed)?;
                rows.push(vec![cell(cap), cell(dpa), cell(upa)]);
            }
        }
        SweepKind::Pd0VsPtot => {
            for &p_tot in &cfg.sweep.p_tot_mw {
                let constraints = constraints_for(regime, p_tot, &caps);
                let sim_cfg = cfg.sim_config(seed);
                let dpa = estimate_performance(
                    &model,
                    &AllocationPolicy::Dpa(constraints.clone()),
                    &sim_cfg,
                    channel,
                )?;
                let upa = estimate_performance(
                    &model,
                    &AllocationPolicy::Upa(constraints),
                    &sim_cfg,
                    channel,
                )?;
                rows.push(vec![
                    cell(p_tot),
                    cell(dpa.detection.pd0),
                    cell(dpa.detection.pf0),
                    cell(dpa.detection.pd0_stderr),
                    cell(dpa.mean_mdc),
                    cell(upa.detection.pd0),
                    cell(upa.detection.pf0),
                    cell(upa.detection.pd0_stderr),
                    cell(upa.mean_mdc),
                ]);
            }
        }
        SweepKind::PowerProfile => {
            let channel_state = ChannelRealization::unit_gain(theta.clone())?;
            let form = build_mdc_form(&stats, &channel_state, channel, model.sigma_n_sq)?;
            let budgets: &[f64] = match regime {
                Regime::Ipc => &cfg.sweep.p0_axis_mw,
                _ => &cfg.sweep.p_tot_mw,
            };
            for &budget in budgets {
                let constraints = match regime {
                    Regime::Ipc => {
                        constraints_for(regime, 0.0, &vec![budget; model.num_sensors()])
                    }
                    _ => constraints_for(regime, budget, &caps),
                };
                let alloc = solvers::solve(&form, &constraints)?;
                profile_rows(&mut rows, &stats, &theta, regime, budget, &alloc.powers);
            }
        }
        SweepKind::OpaCompare => {
            for &p_tot in &cfg.sweep.p_tot_mw {
                let scan = brute_force_opa_2sensor(
                    &model,
                    channel,
                    p_tot,
                    cfg.sim.beta_f,
                    cfg.sweep.rule,
                    cfg.sim.trials,
                    seed,
                )?;
                rows.push(vec![
                    cell(p_tot),
                    cell(scan.best_pd0),
                    cell(scan.dpa_pd0),
                    cell(scan.upa_pd0),
                    cell(scan.best_split),
                    cell(scan.dpa_split),
                    cell(scan.pd0_stderr),
                ]);
            }
        }
    }
    Ok(rows)
}

/// Mean maximized MDC and mean uniform-allocation MDC over the channel
/// realizations, with per-realization derived streams (deterministic at
/// any thread count).
fn mean_mdc(
    cfg: &ScenarioConfig,
    model: &NetworkModel,
    stats: &LocalStats,
    theta: &DVector<f64>,
    constraints: &ConstraintSet,
    channel: ChannelType,
    seed: u64,
) -> Result<(f64, f64)> {
    let m = model.num_sensors();
    let pairs: Vec<(f64, f64)> = (0..cfg.sim.realizations)
        .into_par_iter()
        .map(|r| -> deflect_core::Result<(f64, f64)> {
            let mut rng = derive_rng(seed, r as u64);
            let state = draw_channel(theta, cfg.sim.fading, &mut rng)?;
            let form: MdcForm = build_mdc_form(stats, &state, channel, model.sigma_n_sq)?;
            let dpa = solvers::solve(&form, constraints)?;
            let ua = uniform_allocation(constraints, m)?;
            Ok((dpa.mdc, mdc_value(&form, &ua)?))
        })
        .collect::<deflect_core::Result<Vec<_>>>()?;
    let n = pairs.len() as f64;
    let dpa = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let upa = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    Ok((dpa, upa))
}

fn profile_rows(
    rows: &mut Vec<Vec<String>>,
    stats: &LocalStats,
    theta: &DVector<f64>,
    regime: Regime,
    budget: f64,
    powers: &DVector<f64>,
) {
    for k in 0..powers.len() {
        rows.push(vec![
            (k + 1).to_string(),
            cell(stats.p_d[k]),
            cell(theta[k]),
            regime.label().to_string(),
            cell(budget),
            cell(powers[k]),
        ]);
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_format_deterministically() {
        assert_eq!(cell(1.0), "1.000000000000e0");
        assert_eq!(cell(0.05), "5.000000000000e-2");
        assert_eq!(cell(2.976e-8), "2.976000000000e-8");
    }
}
