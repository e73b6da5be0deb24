//! The five experiment modes. Every command takes a validated [`RunConfig`],
//! writes its data files under the output directory, and returns a summary
//! struct that the binary prints and the acceptance suite inspects.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cavlink_core::cqed::{
    calibrate_beta_phase, design_pulses, PhysicalParams, PulseDesign,
};
use cavlink_core::hilbert::HilbertSpace;
use cavlink_core::mcwf::{
    ensemble_expectation, sample_trajectory_observed, ConstantGenerator, IntegratorConfig,
    JumpChannel, JumpKind,
};
use cavlink_core::operator::LinearOperator;
use cavlink_core::protocol::{
    run_protocol, OverlapSample, PhysicalRunner, ProtocolOutcome, ProtocolStatus,
    TrajectoryMode,
};
use cavlink_core::pulse::PulseSchedule;
use cavlink_core::rng::{derived_seed, rng_from_seed, RNG_ALGORITHM};
use cavlink_core::state::StateVector;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::oracle::{trace_distance, zeros, ToyModel};
use crate::CliError;

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct ProtocolSummary {
    pub mode: &'static str,
    pub rng_algorithm: &'static str,
    pub seed: u64,
    pub n_runs: usize,
    pub success_rate: f64,
    pub mean_rounds: f64,
    pub min_fidelity: f64,
    pub mean_fidelity: f64,
}

/// Abstract-channel Monte Carlo: `n_runs` independent protocol executions
/// with per-run seeds `seed + index`, one JSON line per run plus a summary.
pub fn cmd_protocol(cfg: &RunConfig) -> Result<ProtocolSummary, CliError> {
    let noise = cfg
        .noise
        .clone()
        .ok_or_else(|| CliError::Config("mode `protocol` requires a `noise` section".into()))?;
    let q = cfg.qubit.to_qubit()?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;

    let outcomes: Vec<ProtocolOutcome<f64>> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derived_seed(cfg.seed, k as u64));
            run_protocol(&q, &noise, &mut rng, cfg.max_rounds)
        })
        .collect::<Result<_, _>>()?;

    let mut jsonl = fs::File::create(out_dir.join("runs.jsonl"))?;
    for o in &outcomes {
        jsonl.write_all(o.to_json_line()?.as_bytes())?;
        jsonl.write_all(b"\n")?;
    }

    let n = outcomes.len() as f64;
    let successes = outcomes
        .iter()
        .filter(|o| o.status == ProtocolStatus::Success)
        .count();
    let summary = ProtocolSummary {
        mode: "protocol",
        rng_algorithm: RNG_ALGORITHM,
        seed: cfg.seed,
        n_runs: cfg.n_runs,
        success_rate: successes as f64 / n,
        mean_rounds: outcomes.iter().map(|o| o.rounds_used as f64).sum::<f64>() / n,
        min_fidelity: outcomes.iter().map(|o| o.fidelity).fold(f64::INFINITY, f64::min),
        mean_fidelity: outcomes.iter().map(|o| o.fidelity).sum::<f64>() / n,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// physical
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct StochasticRunSummary {
    pub seed: u64,
    pub status: String,
    pub rounds: usize,
    pub fidelity: f64,
    pub n_jumps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub kappa_loss_over_kappa: f64,
    pub gamma_over_kappa: f64,
    pub rabi_scale: f64,
    /// Deterministic no-jump, no-detected-error run.
    pub conditional_final_fidelity: f64,
    /// Squared overlap with the ideal post-first-transmission state at the
    /// end of leg 1 of the conditional run (unnormalized state: the norm
    /// carries the no-jump weight).
    pub overlap_ii_end: f64,
    pub stochastic: Vec<StochasticRunSummary>,
}

#[derive(Debug, Serialize)]
pub struct PhysicalSummary {
    pub mode: &'static str,
    pub rng_algorithm: &'static str,
    pub seed: u64,
    pub designed_transfer: Option<f64>,
    pub beta_phase: f64,
    pub variants: Vec<VariantSummary>,
}

fn acquire_pulses(cfg: &RunConfig) -> Result<(PulseSchedule<f64>, f64, Option<f64>), CliError> {
    let p = cfg.physical.to_params()?;
    match &cfg.pulse_file {
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| CliError::Config(format!("pulse file `{path}`: {e}")))?;
            let schedule = PulseSchedule::read_csv(std::io::BufReader::new(file))
                .map_err(|e| CliError::Config(format!("pulse file `{path}`: {e}")))?;
            let phase = calibrate_beta_phase(&p, &Arc::new(schedule.clone()), cfg.dt)?;
            Ok((schedule, phase, None))
        }
        None => {
            let design: PulseDesign<f64> = match design_pulses(&p, cfg.gate_duration) {
                Ok(d) => d,
                Err(cavlink_core::Error::PulseDesignBelowTarget { achieved }) => {
                    return Err(CliError::Threshold(format!(
                        "pulse design reached only {achieved} of the 0.98 transfer target"
                    )))
                }
                Err(e) => return Err(e.into()),
            };
            Ok((design.schedule, design.beta_phase, Some(design.transfer)))
        }
    }
}

fn write_overlap_csv(path: &Path, rows: &[OverlapSample]) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "t,overlap_after_step_ii_target,overlap_final_target,backup_overlap"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{}",
            r.t, r.overlap_after_step_ii_target, r.overlap_final_target, r.backup_overlap
        )?;
    }
    Ok(())
}

/// Physical runs over the built-in variant grid: κ′/κ ∈ {0, 1, 10} for
/// Γ ∈ {0, κ}, plus the 10% Rabi-frequency-error case. Each variant runs one
/// deterministic no-jump conditional pass and `n_runs` stochastic
/// trajectories, each emitting its overlap time series.
pub fn cmd_physical(cfg: &RunConfig) -> Result<PhysicalSummary, CliError> {
    let q = cfg.qubit.to_qubit()?;
    let base = cfg.physical.to_params()?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;

    let (schedule, beta_phase, designed_transfer) = acquire_pulses(cfg)?;
    {
        let mut f = fs::File::create(out_dir.join("pulses.csv"))?;
        schedule.write_csv(&mut f)?;
    }

    let variants: Vec<(String, f64, f64, f64)> = {
        let mut v = Vec::new();
        for gamma in [0.0, base.kappa] {
            for ratio in [0.0, 1.0, 10.0] {
                v.push((
                    format!("kp{}_g{}", ratio as u64, gamma as u64),
                    ratio,
                    gamma,
                    1.0,
                ));
            }
        }
        v.push(("rabi_error_10pct".into(), 1.0, base.kappa, 1.1));
        v
    };

    let mut integrator = IntegratorConfig::new(cfg.dt, schedule.duration());
    integrator.sample_stride = 50;

    let mut out_variants = Vec::new();
    for (name, ratio, gamma, scale) in variants {
        let params = PhysicalParams {
            kappa_loss_1: ratio * base.kappa,
            kappa_loss_2: ratio * base.kappa,
            gamma,
            ..base.clone()
        };
        let pulses = if scale == 1.0 {
            schedule.clone()
        } else {
            schedule.scaled(scale)
        };
        let runner = PhysicalRunner::new(params, pulses, integrator.clone(), beta_phase, 1);
        let var_dir = out_dir.join(&name);
        ensure_dir(&var_dir)?;

        // Conditional no-jump pass.
        let mut rows = Vec::new();
        let mut rng = rng_from_seed(derived_seed(cfg.seed, 0));
        let (outcome, _records) = runner.run(
            &q,
            TrajectoryMode::NoJumpConditional,
            1,
            &mut rng,
            Some(&mut |s: OverlapSample| rows.push(s)),
        )?;
        write_overlap_csv(&var_dir.join("conditional.csv"), &rows)?;
        let overlap_ii_end = rows
            .iter().rfind(|r| r.leg == 1)
            .map(|r| r.overlap_after_step_ii_target)
            .unwrap_or(f64::NAN);
        let conditional_final_fidelity = outcome.fidelity;

        // Stochastic trajectories.
        let run_indices: Vec<u64> = (0..cfg.n_runs as u64).collect();
        let results: Vec<(Vec<OverlapSample>, ProtocolOutcome<f64>, usize)> = run_indices
            .par_iter()
            .map(|&k| {
                let mut rows = Vec::new();
                let mut rng = rng_from_seed(derived_seed(cfg.seed, 1000 + k));
                let (outcome, records) = runner.run(
                    &q,
                    TrajectoryMode::Stochastic {
                        base_seed: derived_seed(cfg.seed, 500_000 + 1000 * k),
                    },
                    cfg.max_rounds,
                    &mut rng,
                    Some(&mut |s: OverlapSample| rows.push(s)),
                )?;
                let n_jumps = records.iter().map(|r| r.events.len()).sum();
                Ok::<_, cavlink_core::Error>((rows, outcome, n_jumps))
            })
            .collect::<Result<_, _>>()?;

        let mut stochastic = Vec::new();
        for (k, (rows, outcome, n_jumps)) in results.iter().enumerate() {
            write_overlap_csv(&var_dir.join(format!("traj_{k:03}.csv")), rows)?;
            stochastic.push(StochasticRunSummary {
                seed: derived_seed(cfg.seed, 1000 + k as u64),
                status: match outcome.status {
                    ProtocolStatus::Success => "success".into(),
                    ProtocolStatus::RetryAfterDetectedError => "retry_limit".into(),
                },
                rounds: outcome.rounds_used,
                fidelity: outcome.fidelity,
                n_jumps: *n_jumps,
            });
        }

        let summary = VariantSummary {
            name: name.clone(),
            kappa_loss_over_kappa: ratio,
            gamma_over_kappa: gamma / base.kappa,
            rabi_scale: scale,
            conditional_final_fidelity,
            overlap_ii_end,
            stochastic,
        };
        write_json(&var_dir.join("summary.json"), &summary)?;
        out_variants.push(summary);
    }

    let summary = PhysicalSummary {
        mode: "physical",
        rng_algorithm: RNG_ALGORITHM,
        seed: cfg.seed,
        designed_transfer,
        beta_phase,
        variants: out_variants,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// env-check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EnvModelReport {
    pub name: String,
    pub commuting: bool,
    pub commutator_residual: f64,
    pub no_error_probability: f64,
    pub min_fidelity: f64,
    pub mean_fidelity: f64,
}

#[derive(Debug, Serialize)]
pub struct EnvReport {
    pub mode: &'static str,
    pub models: Vec<EnvModelReport>,
}

/// Commuting-condition check plus the protocol fidelity it implies, per
/// configured environment model.
pub fn cmd_env_check(cfg: &RunConfig) -> Result<EnvReport, CliError> {
    let q = cfg.qubit.to_qubit()?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;
    let mut models = Vec::new();
    for spec in &cfg.env_models {
        let env = spec.build()?;
        let report = cavlink_core::protocol::run_protocol_env(&q, &env)?;
        models.push(EnvModelReport {
            name: spec.name(),
            commuting: report.commuting,
            commutator_residual: report.commutator_residual,
            no_error_probability: report.no_error_probability,
            min_fidelity: report.min_fidelity,
            mean_fidelity: report.mean_fidelity,
        });
    }
    let report = EnvReport {
        mode: "env-check",
        models,
    };
    write_json(&out_dir.join("env_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// pulse-design
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct DesignReport {
    pub mode: &'static str,
    pub gate_duration: f64,
    pub achieved_transfer: f64,
    pub beta_phase: f64,
    pub transfer_target: f64,
}

/// Design the gate envelopes and report the achieved ideal-case transfer.
pub fn cmd_pulse_design(cfg: &RunConfig) -> Result<DesignReport, CliError> {
    let p = cfg.physical.to_params()?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;
    let design = match design_pulses(&p, cfg.gate_duration) {
        Ok(d) => d,
        Err(cavlink_core::Error::PulseDesignBelowTarget { achieved }) => {
            return Err(CliError::Threshold(format!(
                "achieved transfer {achieved} below the 0.98 target"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let mut f = fs::File::create(out_dir.join("pulses.csv"))?;
    design.schedule.write_csv(&mut f)?;
    let report = DesignReport {
        mode: "pulse-design",
        gate_duration: cfg.gate_duration,
        achieved_transfer: design.transfer,
        beta_phase: design.beta_phase,
        transfer_target: cavlink_core::cqed::TRANSFER_TARGET,
    };
    write_json(&out_dir.join("design_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// oracle-compare
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct OracleCheckpoint {
    pub t: f64,
    pub trace_distance: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub mode: &'static str,
    pub n_traj: usize,
    pub tolerance: f64,
    pub checkpoints: Vec<OracleCheckpoint>,
    pub max_trace_distance: f64,
    pub pass: bool,
}

type ToyTrajectorySide = (
    Arc<HilbertSpace>,
    ConstantGenerator<f64>,
    JumpChannel<f64>,
    LinearOperator<f64>,
);

/// Build the trajectory-engine side of the toy system from the library's
/// operator constructors (the dense oracle builds its own matrices).
fn toy_trajectory_side(spec: &crate::config::OracleSpec) -> Result<ToyTrajectorySide, CliError> {
    use cavlink_core::hilbert::{cavity, Subsystem};
    use cavlink_core::operator::{annihilator, number_op, subsystem_op, transition};

    let space = HilbertSpace::new(vec![
        Subsystem::new("atom", &["g", "e"]),
        cavity("cav", spec.n_max),
    ])?;
    let sigma_plus = transition::<f64>(&space, "atom", 1, 0)?;
    let a = annihilator::<f64>(&space, "cav")?;
    let drive = subsystem_op(
        &space,
        "atom",
        &[
            vec![C64::new(0.0, 0.0), C64::new(spec.drive, 0.0)],
            vec![C64::new(spec.drive, 0.0), C64::new(0.0, 0.0)],
        ],
    )?;
    let jc = sigma_plus
        .matmul(&a)?
        .scaled(C64::new(spec.g, 0.0));
    let h = drive
        .add(&jc)?
        .add(&jc.adjoint())?
        .add(&number_op::<f64>(&space, "cav")?.scaled(C64::new(0.0, -spec.kappa)))?;
    let jump = JumpChannel::constant(
        "cavity_output",
        JumpKind::CavityOutput,
        a.scaled(C64::new((2.0 * spec.kappa).sqrt(), 0.0)),
    );
    let n_op = number_op::<f64>(&space, "cav")?;
    Ok((space, ConstantGenerator::new(h), jump, n_op))
}

/// Trajectory-ensemble density matrices against direct Lindblad integration
/// on the toy system, with the photon-number series as a human-readable CSV.
pub fn cmd_oracle_compare(cfg: &RunConfig) -> Result<OracleReport, CliError> {
    let spec = &cfg.oracle;
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;

    let model = ToyModel::new(spec.g, spec.drive, spec.kappa, spec.n_max);
    let mut rho0 = zeros(model.dim);
    rho0[0][0] = C64::new(1.0, 0.0);
    let mut checkpoints = spec.checkpoints.clone();
    checkpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let oracle_rhos = model.lindblad_checkpoints(&rho0, cfg.dt, &checkpoints);

    let (space, gen, jump, n_op) = toy_trajectory_side(spec)?;
    let psi0 = StateVector::<f64>::basis(space.clone(), 0);
    let mut integ = IntegratorConfig::new(cfg.dt, *checkpoints.last().unwrap());
    // Align the sampling grid with the checkpoints.
    integ.sample_stride = ((checkpoints[0] / cfg.dt).round() as usize).max(1);

    let dim = model.dim;
    const BATCH: usize = 256;
    let mut sums: Vec<crate::oracle::DenseMat> =
        checkpoints.iter().map(|_| zeros(dim)).collect();
    let mut next = 0usize;
    while next < spec.n_traj {
        let hi = (next + BATCH).min(spec.n_traj);
        let batch: Vec<Vec<crate::oracle::DenseMat>> = (next..hi)
            .into_par_iter()
            .map(|k| {
                let mut acc: Vec<crate::oracle::DenseMat> =
                    checkpoints.iter().map(|_| zeros(dim)).collect();
                sample_trajectory_observed(
                    &psi0,
                    &gen,
                    std::slice::from_ref(&jump),
                    &integ,
                    derived_seed(cfg.seed, k as u64),
                    &mut |t, psi| {
                        if let Some(ci) =
                            checkpoints.iter().position(|&c| (c - t).abs() < 1e-9)
                        {
                            let n2 = psi.norm_sqr();
                            let a = psi.amplitudes();
                            for i in 0..dim {
                                for j in 0..dim {
                                    acc[ci][i][j] += a[i] * a[j].conj() / n2;
                                }
                            }
                        }
                    },
                )
                .map(|_| acc)
            })
            .collect::<Result<_, _>>()?;
        for acc in &batch {
            for (ci, m) in acc.iter().enumerate() {
                for i in 0..dim {
                    for j in 0..dim {
                        sums[ci][i][j] += m[i][j];
                    }
                }
            }
        }
        next = hi;
    }

    let mut report_points = Vec::new();
    let mut max_d: f64 = 0.0;
    for (ci, sum) in sums.iter().enumerate() {
        let mut rho = zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                rho[i][j] = sum[i][j] / spec.n_traj as f64;
            }
        }
        let d = trace_distance(&rho, &oracle_rhos[ci]);
        max_d = max_d.max(d);
        report_points.push(OracleCheckpoint {
            t: checkpoints[ci],
            trace_distance: d,
        });
    }

    // Photon-number series for plotting.
    let series = ensemble_expectation(
        &n_op,
        &psi0,
        &gen,
        std::slice::from_ref(&jump),
        &integ,
        spec.n_traj.min(1000),
        cfg.seed,
    )?;
    let lind_series = model.lindblad_checkpoints(&rho0, cfg.dt, &series.times[1..]);
    let mut f = fs::File::create(out_dir.join("oracle_compare.csv"))?;
    writeln!(f, "t,n_mcwf,n_stderr,n_lindblad")?;
    for (k, &t) in series.times.iter().enumerate() {
        let lind = if k == 0 {
            0.0
        } else {
            model.photon_number(&lind_series[k - 1])
        };
        writeln!(f, "{},{},{},{}", t, series.mean[k], series.stderr[k], lind)?;
    }

    let pass = max_d <= spec.tolerance;
    let report = OracleReport {
        mode: "oracle-compare",
        n_traj: spec.n_traj,
        tolerance: spec.tolerance,
        checkpoints: report_points,
        max_trace_distance: max_d,
        pass,
    };
    write_json(&out_dir.join("oracle_report.json"), &report)?;
    if !pass {
        return Err(CliError::Threshold(format!(
            "trace distance {max_d} exceeds tolerance {}",
            spec.tolerance
        )));
    }
    Ok(report)
}

/// Dispatch on the config's mode; returns a short human-readable line.
pub fn run_mode(cfg: &RunConfig) -> Result<String, CliError> {
    match cfg.mode {
        Mode::Protocol => {
            let s = cmd_protocol(cfg)?;
            Ok(format!(
                "protocol: {} runs, success rate {:.4}, mean rounds {:.3}, min fidelity {:.6}",
                s.n_runs, s.success_rate, s.mean_rounds, s.min_fidelity
            ))
        }
        Mode::Physical => {
            let s = cmd_physical(cfg)?;
            let lines: Vec<String> = s
                .variants
                .iter()
                .map(|v| {
                    format!(
                        "  {}: conditional fidelity {:.6}, overlap(ii) {:.4}",
                        v.name, v.conditional_final_fidelity, v.overlap_ii_end
                    )
                })
                .collect();
            Ok(format!("physical:\n{}", lines.join("\n")))
        }
        Mode::EnvCheck => {
            let s = cmd_env_check(cfg)?;
            let lines: Vec<String> = s
                .models
                .iter()
                .map(|m| {
                    format!(
                        "  {}: commuting={}, residual={:.3e}, min fidelity {:.6}",
                        m.name, m.commuting, m.commutator_residual, m.min_fidelity
                    )
                })
                .collect();
            Ok(format!("env-check:\n{}", lines.join("\n")))
        }
        Mode::PulseDesign => {
            let s = cmd_pulse_design(cfg)?;
            Ok(format!(
                "pulse-design: transfer {:.4} (target {}), beta phase {:.4}",
                s.achieved_transfer, s.transfer_target, s.beta_phase
            ))
        }
        Mode::OracleCompare => {
            let s = cmd_oracle_compare(cfg)?;
            Ok(format!(
                "oracle-compare: max trace distance {:.4} over {} trajectories (tolerance {})",
                s.max_trace_distance, s.n_traj, s.tolerance
            ))
        }
    }
}
