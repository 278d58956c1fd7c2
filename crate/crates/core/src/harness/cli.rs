use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use super::config::RunConfig;
use super::io;
use super::report::{Provenance, ReportBundle};
use crate::error::{Error, Result};
use crate::keyrate::{
    depolarizing_relation, dw_chsh_rate, dw_rate_fn, heuristic_min_block_length,
    robust_anchor_check, FiniteKeyQuery, ROBUST_PROTOCOL_CRITICAL_QBER,
};
use crate::link::{
    calibrate, expected_event_rate, herald_probability, optimize_window, run_link, window_scan,
    CalibrationTargets, WindowConfig,
};
use crate::protocol::{
    estimate_bell, run_protocol_on_heralds, sift, tabulate, CorrelationTable, HeraldedSampler,
    StateSampler,
};
use crate::quantum::werner;
use crate::stats::{chsh_win_count, fit_row_visibilities, worst_case_bounds};

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set v_max=0.9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Write CSV output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TableSource {
    /// Correlation table CSV (`x,y,n,n_same`); defaults to the bundled dataset.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate heralds and protocol rounds, writing the event ledger as CSV.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// CHSH value, correlators and QBERs of a table or ledger.
    Analyze {
        #[command(flatten)]
        source: TableSource,
        /// Event ledger CSV to tabulate instead of a table.
        #[arg(long, conflicts_with = "table")]
        ledger: Option<PathBuf>,
    },
    /// Bayesian worst-case CHSH value and QBERs.
    Bayes {
        #[command(flatten)]
        source: TableSource,
        #[arg(long)]
        tail: Option<f64>,
        /// `paper_floor` or `direct`.
        #[arg(long)]
        method: Option<String>,
    },
    /// Asymptotic key rate and anchor check for a CHSH value and QBER.
    Keyrate {
        #[command(flatten)]
        source: TableSource,
        #[arg(long = "s", requires = "q")]
        s_value: Option<f64>,
        #[arg(long = "q", requires = "s_value")]
        q: Option<f64>,
    },
    /// Heuristic minimum block length over a grid of security parameters.
    FiniteKey {
        #[arg(long = "s", default_value_t = 2.578)]
        s_value: f64,
        #[arg(long = "q", default_value_t = 0.0779)]
        q: f64,
        /// Comma-separated security parameters.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
    },
    /// Window trade-off curve as CSV over a grid of start times.
    WindowScan {
        #[arg(long, default_value_t = 700.0)]
        from: f64,
        #[arg(long, default_value_t = 840.0)]
        to: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Window start maximizing key per unit time.
    OptimizeWindow {
        #[arg(long, default_value_t = 700.0)]
        lo: f64,
        #[arg(long, default_value_t = 840.0)]
        hi: f64,
    },
    /// Expected event rate, herald probability and inter-herald time.
    RateBudget {
        /// Also simulate this many heralds.
        #[arg(long, requires = "seed")]
        heralds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Refit the emission-time model and print it as configuration lines.
    Calibrate {
        /// CHSH value of the unfiltered window.
        #[arg(long, default_value_t = 2.3)]
        s_full: f64,
    },
}

#[derive(Parser, Debug)]
#[command(
    name = "diqkd",
    version,
    about = "Heralded-entanglement DIQKD link simulator and analysis toolkit"
)]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let root = match Root::try_parse_from(args) {
        Ok(r) => r,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match execute(root, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

struct Inputs {
    config: RunConfig,
    provenance: Provenance,
}

fn prepare(common: &Common, seed: Option<u64>) -> Result<Inputs> {
    let mut provenance = Provenance::new(None);
    let mut config = match &common.config {
        Some(path) => {
            let bytes = fs::read(path)?;
            provenance = provenance.with_input("config", &bytes);
            let mut c = RunConfig::default();
            c.apply_text(&String::from_utf8_lossy(&bytes))?;
            c
        }
        None => RunConfig::default(),
    };
    config.apply_overrides(common.overrides.iter().map(String::as_str))?;
    if let Some(s) = seed {
        config.seed = Some(s);
    }
    if let Some(o) = &common.output {
        config.output = Some(o.clone());
    }
    config.validate()?;
    provenance.seed = config.seed;
    Ok(Inputs { config, provenance })
}

fn read_table(source: &TableSource, provenance: &mut Provenance) -> Result<CorrelationTable> {
    let bytes = match &source.table {
        Some(p) => fs::read(io::resolve_data_path(p))?,
        None => io::bundled_table_source()?,
    };
    *provenance = std::mem::take(provenance).with_input("table", &bytes);
    io::parse_correlation_table(bytes.as_slice())
}

/// Sends CSV to the configured output file, or to `out`.
fn emit_csv<F>(output: Option<&Path>, out: &mut dyn Write, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match output {
        Some(path) => {
            let mut f = fs::File::create(path)?;
            write(&mut f)
        }
        None => write(out),
    }
}

fn key_rate_fn(s: f64, q: f64) -> f64 {
    dw_chsh_rate(s, q).map(|r| r.rate).unwrap_or(0.0)
}

fn execute(root: Root, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let common = &root.common;
    match root.command {
        Command::Simulate { seed, rounds } => {
            let Inputs {
                mut config,
                provenance,
            } = prepare(common, seed)?;
            if let Some(r) = rounds {
                config.rounds = r;
            }
            let seed = config.require_seed()?;
            let window = config.window()?;
            let heralds = run_link(&config.link, &config.model, window, config.rounds, seed)?;
            let clean = StateSampler::new(werner(config.model.v_max)?, config.convention);
            let noisy = StateSampler::new(werner(0.0)?, config.convention);
            let mut sampler = HeraldedSampler::new(clean, noisy, &heralds);
            let ledger = run_protocol_on_heralds(&heralds, &mut sampler, &config.settings, seed)?;
            emit_csv(config.output.as_deref(), out, |w| {
                io::write_ledger(&ledger, w)
            })?;

            let mut report = ReportBundle::new("simulate", provenance);
            report.push("rounds", ledger.len().to_string());
            report.push(
                "contaminated_heralds",
                heralds
                    .iter()
                    .filter(|h| h.contaminated)
                    .count()
                    .to_string(),
            );
            report.push_num("elapsed_s", heralds.last().map_or(0.0, |h| h.herald_time_s));
            report.push_num(
                "key_mismatch_rate",
                sift(&ledger).mismatch_rate.unwrap_or(f64::NAN),
            );
            // keep stdout clean when it carries the ledger
            let sink: &mut dyn Write = if config.output.is_some() { out } else { err };
            sink.write_all(report.render().as_bytes())?;
        }
        Command::Analyze { source, ledger } => {
            let Inputs { mut provenance, .. } = prepare(common, None)?;
            let (table, from_ledger) = match &ledger {
                Some(path) => {
                    let bytes = fs::read(path)?;
                    provenance = provenance.with_input("ledger", &bytes);
                    let l = io::parse_ledger(bytes.as_slice())?;
                    (tabulate(&l), Some(sift(&l)))
                }
                None => (read_table(&source, &mut provenance)?, None),
            };
            let mut report = ReportBundle::new("analyze", provenance);
            report.bell = Some(estimate_bell(&table)?);
            report.push("rounds", table.total().to_string());
            let config = RunConfig::default();
            if let Ok([v0, v1]) = fit_row_visibilities(&table, &config.settings) {
                report.push_num("visibility_fit_y0", v0);
                report.push_num("visibility_fit_y1", v1);
            }
            if let Some(k) = from_ledger {
                report.push("sifted_bits", k.key_a.len().to_string());
            }
            out.write_all(report.render().as_bytes())?;
        }
        Command::Bayes {
            source,
            tail,
            method,
        } => {
            let mut overrides: Vec<String> = common.overrides.clone();
            if let Some(t) = tail {
                overrides.push(format!("tail={t}"));
            }
            if let Some(m) = method {
                overrides.push(format!("win_count={m}"));
            }
            let common = Common {
                config: common.config.clone(),
                overrides,
                output: common.output.clone(),
            };
            let Inputs {
                config,
                mut provenance,
            } = prepare(&common, None)?;
            let table = read_table(&source, &mut provenance)?;
            let bounds = worst_case_bounds(&table, config.tail, config.win_count)?;
            let (wins, n_chsh) = chsh_win_count(&table, config.win_count)?;
            if let Some(path) = &config.output {
                io::write_bounds(&[io::BoundsRow::from(&bounds)], fs::File::create(path)?)?;
            }
            let mut report = ReportBundle::new("bayes", provenance);
            report.bounds = Some(bounds);
            report.push("win_count", wins.to_string());
            report.push("chsh_rounds", n_chsh.to_string());
            out.write_all(report.render().as_bytes())?;
        }
        Command::Keyrate { source, s_value, q } => {
            let Inputs { mut provenance, .. } = prepare(common, None)?;
            let (s, q) = match (s_value, q) {
                (Some(s), Some(q)) => (s, q),
                _ => {
                    let est = estimate_bell(&read_table(&source, &mut provenance)?)?;
                    (est.s_value, est.q_avg)
                }
            };
            let mut report = ReportBundle::new("keyrate", provenance);
            report.push_num("S_in", s);
            report.push_num("Q_in", q);
            report.key_rate = Some(dw_chsh_rate(s, q)?);
            report.anchor = Some(robust_anchor_check(s, q));
            let (s_crit, _) = depolarizing_relation(1.0 - 2.0 * ROBUST_PROTOCOL_CRITICAL_QBER)?;
            report.push_num("depolarizing.S_at_Q_0.082", s_crit);
            out.write_all(report.render().as_bytes())?;
        }
        Command::FiniteKey { s_value, q, eps } => {
            let Inputs { config, .. } = prepare(common, None)?;
            let eps = if eps.is_empty() {
                (1..=12).map(|k| 10f64.powi(-k)).collect()
            } else {
                eps
            };
            let rows = eps
                .iter()
                .map(|&e| {
                    let query = FiniteKeyQuery {
                        s_value,
                        q_avg: q,
                        eps_di: e,
                        f_ec: config.f_ec,
                        penalty: config.finite_key_penalty,
                    };
                    Ok((e, heuristic_min_block_length(&query, dw_rate_fn)?))
                })
                .collect::<Result<Vec<_>>>()?;
            emit_csv(config.output.as_deref(), out, |w| {
                io::write_finite_key(&rows, w)
            })?;
        }
        Command::WindowScan { from, to, step } => {
            let Inputs { config, .. } = prepare(common, None)?;
            if !(step > 0.0 && from <= to) {
                return Err(Error::Domain(format!(
                    "invalid grid {from}..{to} step {step}"
                )));
            }
            let n = ((to - from) / step + 1e-9).floor() as usize;
            let grid: Vec<f64> = (0..=n).map(|i| from + i as f64 * step).collect();
            let points = window_scan(&config.model, &grid, config.window_end_ns, &key_rate_fn)?;
            emit_csv(config.output.as_deref(), out, |w| {
                io::write_scan(&points, w)
            })?;
        }
        Command::OptimizeWindow { lo, hi } => {
            let Inputs { config, provenance } = prepare(common, None)?;
            let t_e = config.window_end_ns;
            let t_s = optimize_window(&config.model, t_e, &key_rate_fn, (lo, hi))?;
            let p = window_scan(&config.model, &[t_s], t_e, &key_rate_fn)?[0];
            let mut report = ReportBundle::new("optimize-window", provenance);
            report.push_num("t_s_ns", t_s);
            report.push_num("t_e_ns", t_e);
            report.push_num("S", p.s_value);
            report.push_num("Q", p.qber);
            report.push_num("relative_rate", p.relative_rate);
            report.push_num("key_per_time", p.key_per_time);
            out.write_all(report.render().as_bytes())?;
        }
        Command::RateBudget { heralds, seed } => {
            let Inputs { config, provenance } = prepare(common, seed)?;
            let window = config.window()?;
            let (prob, contaminated) = herald_probability(&config.link, &config.model, window)?;
            let rate = expected_event_rate(&config.link);
            let mean_gap = config.link.attempt_period_s() / prob + config.link.dead_time_s();
            let mut report = ReportBundle::new("rate-budget", provenance);
            report.push_num("expected_event_rate_hz", rate);
            report.push_num("mean_interval_s", 1.0 / rate);
            report.push_num("herald_probability", prob);
            report.push_num("contaminated_fraction", contaminated);
            report.push_num("analytic_mean_gap_s", mean_gap);
            if let Some(n) = heralds {
                let events = run_link(
                    &config.link,
                    &config.model,
                    window,
                    n,
                    config.require_seed()?,
                )?;
                let gaps = inter_herald_gaps(&events);
                let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
                report.push("simulated_heralds", n.to_string());
                report.push_num("simulated_mean_gap_s", mean);
            }
            out.write_all(report.render().as_bytes())?;
        }
        Command::Calibrate { s_full } => {
            let Inputs { config, provenance } = prepare(common, None)?;
            let targets = CalibrationTargets {
                window: WindowConfig::new(config.window_start_ns, config.window_end_ns)?,
                s_full_window: s_full,
                ..CalibrationTargets::default()
            };
            let m = calibrate(&config.model, &targets)?;
            writeln!(out, "# diqkd {} calibrate", provenance.version)?;
            writeln!(out, "pulse_center_ns = {}", m.pulse_center_ns)?;
            writeln!(
                out,
                "double_emission_fraction = {}",
                m.double_emission_fraction
            )?;
            writeln!(out, "v_max = {}", m.v_max)?;
            writeln!(out, "q_floor = {}", m.q_floor)?;
        }
    }
    Ok(())
}

/// Time between consecutive heralds, the first measured from t = 0.
pub fn inter_herald_gaps(events: &[crate::link::HeraldEvent]) -> Vec<f64> {
    let mut prev = 0.0;
    events
        .iter()
        .map(|e| {
            let gap = e.herald_time_s - prev;
            prev = e.herald_time_s;
            gap
        })
        .collect()
}
