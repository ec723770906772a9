use std::io::Write;
use std::path::Path;

use markovize::bounds::{optimize_m, BoundParams, MChoice};
use markovize::designs::{gate_count, gate_depth, min_repetitions, CircuitSpec, DENSE_QUBIT_CAP};
use markovize::montecarlo::{
    records_to_csv, run_ensemble, sample_process, EnsembleSpec, EnsembleSummary, InitialState,
    MeasureSet,
};
use markovize::process::ProcessDims;
use markovize::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{
    header_lines, BoundSweepConfig, Command, DepthSweepConfig, EnsembleArgs, EnsembleChoice,
    Format, InitialChoice, ProcessDumpConfig, RunConfig, SampleConfig,
};
use crate::validate::{run_suite, ValidateOptions};
use crate::{CliError, CliResult, VERSION};

/// Largest dilation dimension `d_E d_S^(2k+1)` sampled without `--force`.
pub const DILATION_CAP: usize = 1 << 13;

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn thread_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn non_negative(name: &str, v: i64, max: i64) -> CliResult<u32> {
    if v < 0 || v > max {
        return Err(CliError::Usage(format!("{name} = {v} outside [0, {max}]")));
    }
    Ok(v as u32)
}

fn json_document(config: &RunConfig, key: &str, body: serde_json::Value) -> String {
    let mut doc = json!({ "version": VERSION, "config": config });
    doc[key] = body;
    let mut s = serde_json::to_string_pretty(&doc).expect("json serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoundRow {
    pub log2_de: u32,
    pub k: u32,
    pub t: u32,
    pub delta: f64,
    pub epsilon: f64,
    pub m_star: f64,
    pub log2_bnu: f64,
    pub bnu_clamped: f64,
}

pub fn bound_rows(config: &BoundSweepConfig, threads: usize) -> CliResult<Vec<BoundRow>> {
    let mut tuples = Vec::new();
    for l in config.log2_de.values() {
        let l = non_negative("log2_dE", l, 63)?;
        for k in config.k.values() {
            let k = non_negative("k", k, 64)?;
            for t in config.t.values() {
                let t = non_negative("t", t, 1 << 20)?;
                for &delta in &config.delta.0 {
                    for &epsilon in &config.epsilon.0 {
                        let p = BoundParams {
                            d_s: config.ds,
                            log2_de: l,
                            k,
                            t,
                            epsilon,
                            delta,
                            m: MChoice::Optimize,
                        };
                        p.validate()?;
                        tuples.push(p);
                    }
                }
            }
        }
    }
    let rows: Result<Vec<BoundRow>, Error> = thread_pool(threads)?.install(|| {
        tuples
            .par_iter()
            .map(|p| {
                let (m, b) = optimize_m(p)?;
                Ok(BoundRow {
                    log2_de: p.log2_de,
                    k: p.k,
                    t: p.t,
                    delta: p.delta,
                    epsilon: p.epsilon,
                    m_star: m,
                    log2_bnu: b.log2_total,
                    bnu_clamped: b.total_clamped,
                })
            })
            .collect()
    });
    Ok(rows?)
}

pub fn bound_sweep(config: &BoundSweepConfig, threads: usize) -> CliResult<String> {
    let rows = bound_rows(config, threads)?;
    let run = RunConfig::BoundSweep(config.clone());
    Ok(match config.format {
        Format::Json => json_document(&run, "rows", json!(rows)),
        Format::Csv => {
            let mut out = header_lines(&run);
            out.push_str("log2_dE,k,t,delta,epsilon,m_star,log2_Bnu,Bnu_clamped\n");
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.log2_de,
                    r.k,
                    r.t,
                    fmt_real(r.delta),
                    fmt_real(r.epsilon),
                    fmt_real(r.m_star),
                    fmt_real(r.log2_bnu),
                    fmt_real(r.bnu_clamped)
                ));
            }
            out
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DepthRow {
    pub n: usize,
    pub t: u32,
    pub epsilon: f64,
    pub ell: usize,
    pub depth: f64,
    pub two_qubit_gates: usize,
    /// Design tail bound with `log2 d_E = n − log2 d_S`.
    pub bnu_at_premise: f64,
}

pub fn depth_rows(config: &DepthSweepConfig) -> CliResult<Vec<DepthRow>> {
    if !config.ds.is_power_of_two() || config.ds < 2 {
        return Err(CliError::Usage(format!(
            "--ds must be a power of two for qubit circuits, got {}",
            config.ds
        )));
    }
    let system_qubits = config.ds.trailing_zeros() as i64;
    let mut rows = Vec::new();
    for n in config.n.values() {
        if n <= system_qubits || n - system_qubits > 63 {
            return Err(CliError::Usage(format!(
                "n = {n} leaves no valid environment for d_S = {}",
                config.ds
            )));
        }
        for t in config.t.values() {
            let t = non_negative("t", t, 1 << 20)?;
            for &epsilon in &config.epsilon.0 {
                let spec = CircuitSpec::with_min_repetitions(n as usize, t, epsilon)?;
                let params = BoundParams {
                    d_s: config.ds,
                    log2_de: (n - system_qubits) as u32,
                    k: config.k,
                    t,
                    epsilon,
                    delta: config.delta,
                    m: MChoice::Optimize,
                };
                rows.push(DepthRow {
                    n: n as usize,
                    t,
                    epsilon,
                    ell: spec.ell(),
                    depth: gate_depth(t, epsilon, n as usize)?,
                    two_qubit_gates: gate_count(&spec).0,
                    bnu_at_premise: optimize_m(&params)?.1.total_clamped,
                });
            }
        }
    }
    Ok(rows)
}

pub fn depth_sweep(config: &DepthSweepConfig) -> CliResult<String> {
    let rows = depth_rows(config)?;
    let run = RunConfig::DepthSweep(config.clone());
    Ok(match config.format {
        Format::Json => json_document(&run, "rows", json!(rows)),
        Format::Csv => {
            let mut out = header_lines(&run);
            out.push_str("n,t,epsilon,ell,D,two_qubit_gates,Bnu_at_premise\n");
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.n,
                    r.t,
                    fmt_real(r.epsilon),
                    r.ell,
                    fmt_real(r.depth),
                    r.two_qubit_gates,
                    fmt_real(r.bnu_at_premise)
                ));
            }
            out
        }
    })
}

/// Turns command-line ensemble arguments into an ensemble, enforcing the
/// dense-size cap unless `force` is set.
pub fn ensemble_spec(args: &EnsembleArgs, samples: usize, force: bool) -> CliResult<EnsembleSpec> {
    let cap = |what: String| -> CliResult<()> {
        Err(CliError::Core(Error::ResourceCap(format!(
            "{what}; pass --force to run anyway"
        ))))
    };
    let spec = match args.ensemble {
        EnsembleChoice::Haar => {
            let l = args
                .log2_de
                .ok_or_else(|| CliError::Usage("haar ensembles need --log2-de".into()))?;
            if l > 30 {
                cap(format!("d_E = 2^{l} is too large to simulate"))?;
            }
            let dims = ProcessDims::new(1 << l, args.ds as usize, args.k)?;
            EnsembleSpec::haar(dims, samples, args.seed)
        }
        EnsembleChoice::Design => {
            let n = args
                .n
                .ok_or_else(|| CliError::Usage("design ensembles need --n".into()))?;
            if !args.ds.is_power_of_two() || args.ds < 2 {
                return Err(CliError::Usage(format!(
                    "design ensembles need a power-of-two --ds, got {}",
                    args.ds
                )));
            }
            let sq = args.ds.trailing_zeros() as usize;
            if n <= sq {
                return Err(CliError::Usage(format!(
                    "--n {n} leaves no environment qubits"
                )));
            }
            if let Some(l) = args.log2_de {
                if l as usize + sq != n {
                    return Err(CliError::Usage(format!(
                        "--log2-de {l} is inconsistent with --n {n} and --ds {}",
                        args.ds
                    )));
                }
            }
            if n > DENSE_QUBIT_CAP && !force {
                cap(format!(
                    "{n}-qubit circuits exceed the {DENSE_QUBIT_CAP}-qubit cap"
                ))?;
            }
            let ell = match args.ell {
                Some(l) => l,
                None => min_repetitions(args.t, args.epsilon, n)?,
            };
            let circuit = CircuitSpec::new(n, args.t, args.epsilon, ell)?;
            EnsembleSpec::design(circuit, sq, args.k, samples, args.seed)?
        }
    };
    let dilation = spec
        .dims
        .d_s
        .checked_pow(2 * spec.dims.k as u32 + 1)
        .and_then(|x| x.checked_mul(spec.dims.d_e));
    match dilation {
        Some(d) if d <= DILATION_CAP || force => {}
        Some(d) => cap(format!("dilation dimension {d} exceeds {DILATION_CAP}"))?,
        None => cap("dilation dimension overflows".into())?,
    }
    let initial = match args.initial {
        InitialChoice::Zero => InitialState::AllZeroPure,
        InitialChoice::MixedEnv => InitialState::MixedEnvironment,
    };
    Ok(spec.with_initial(initial))
}

/// CSV of per-sample measures and the summary JSON.
pub fn sample(config: &SampleConfig, threads: usize, force: bool) -> CliResult<(String, String)> {
    if config.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let spec = ensemble_spec(&config.ensemble, config.samples, force)?;
    let records = run_ensemble(&spec, threads, MeasureSet::default())?;
    let run = RunConfig::Sample(config.clone());
    let csv = header_lines(&run) + &records_to_csv(&records);
    let summary = EnsembleSummary::new(&spec, &records, &config.deltas.0);
    Ok((csv, json_document(&run, "summary", json!(summary))))
}

pub fn process_dump(config: &ProcessDumpConfig, force: bool) -> CliResult<String> {
    let spec = ensemble_spec(&config.ensemble, config.index + 1, force)?;
    let upsilon = sample_process(&spec, config.index)?;
    Ok(header_lines(&RunConfig::ProcessDump(config.clone())) + &upsilon.to_text())
}

/// Strips the `#` header so the body can be parsed.
pub fn strip_header(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::BoundSweep { config, exec } => {
            emit(exec.output.as_deref(), &bound_sweep(&config, exec.threads)?)
        }
        Command::DepthSweep { config, exec } => {
            emit(exec.output.as_deref(), &depth_sweep(&config)?)
        }
        Command::Sample {
            config,
            exec,
            summary,
            force,
        } => {
            let (csv, json) = sample(&config, exec.threads, force)?;
            emit(exec.output.as_deref(), &csv)?;
            if let Some(p) = summary {
                emit(Some(&p), &json)?;
            }
            Ok(())
        }
        Command::Validate { config, exec } => {
            let opts = ValidateOptions {
                threads: exec.threads,
                corrupt_phase: config.corrupt_phase,
            };
            let outcomes = run_suite(&config.only, &opts)?;
            let mut report = String::new();
            for o in &outcomes {
                report.push_str(&o.line());
                report.push('\n');
            }
            emit(exec.output.as_deref(), &report)?;
            let failed: Vec<String> = outcomes
                .iter()
                .filter(|o| !o.passed)
                .map(|o| format!("{} ({})", o.name, o.detail))
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::ValidationFailed(failed))
            }
        }
        Command::ProcessDump {
            config,
            exec,
            force,
        } => emit(exec.output.as_deref(), &process_dump(&config, force)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_header, Cli};
    use clap::Parser;
    use markovize::bounds::optimize_m;
    use markovize::process::ProcessChoi;

    fn parse(args: &[&str]) -> Command {
        let mut full = vec!["nmarkov"];
        full.extend_from_slice(args);
        Cli::try_parse_from(full).unwrap().command
    }

    #[test]
    fn default_bound_sweep_size() {
        let Command::BoundSweep { config, .. } = parse(&["bound-sweep", "--log2-de", "10..12"])
        else {
            panic!()
        };
        let rows = bound_rows(&config, 1).unwrap();
        assert_eq!(rows.len(), 3 * 5 * 9);
        let Command::BoundSweep { config, .. } = parse(&["bound-sweep"]) else {
            panic!()
        };
        assert_eq!(
            config.log2_de.values().len() * config.k.values().len() * config.t.values().len(),
            51 * 5 * 9
        );
    }

    #[test]
    fn single_tuple_sweep_matches_optimizer() {
        let Command::BoundSweep { config, .. } =
            parse(&["bound-sweep", "--log2-de", "40", "--k", "1", "--t", "6"])
        else {
            panic!()
        };
        let text = bound_sweep(&config, 1).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body.len(), 2);
        let (m, b) = optimize_m(&BoundParams {
            d_s: 2,
            log2_de: 40,
            k: 1,
            t: 6,
            epsilon: 1e-12,
            delta: 0.1,
            m: MChoice::Optimize,
        })
        .unwrap();
        let f: Vec<&str> = body[1].split(',').collect();
        assert_eq!(f[5].parse::<f64>().unwrap(), m);
        assert_eq!(f[6].parse::<f64>().unwrap(), b.log2_total);
        assert_eq!(parse_header(&text).unwrap(), RunConfig::BoundSweep(config));
    }

    #[test]
    fn sweeps_are_stable_across_threads() {
        let Command::BoundSweep { config, .. } = parse(&["bound-sweep", "--log2-de", "10..20:5"])
        else {
            panic!()
        };
        assert_eq!(
            bound_sweep(&config, 1).unwrap(),
            bound_sweep(&config, 3).unwrap()
        );
    }

    #[test]
    fn depth_sweep_rows() {
        let Command::DepthSweep { config, .. } = parse(&["depth-sweep"]) else {
            panic!()
        };
        let rows = depth_rows(&config).unwrap();
        assert_eq!(rows.len(), 26);
        assert!(rows.iter().all(|r| r.ell <= 12));
        let ds: Vec<f64> = rows.iter().map(|r| r.depth).collect();
        let spread = ds.iter().cloned().fold(f64::MIN, f64::max)
            - ds.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1.2);
        let Command::DepthSweep { config, .. } =
            parse(&["depth-sweep", "--eps", "1", "--n", "4..9"])
        else {
            panic!()
        };
        assert!(depth_rows(&config)
            .unwrap()
            .iter()
            .all(|r| r.depth == 10.0 && r.ell == 10));
    }

    #[test]
    fn design_sample_uses_min_repetitions() {
        let Command::Sample { config, .. } = parse(&[
            "sample",
            "--ensemble",
            "design",
            "--n",
            "6",
            "--t",
            "2",
            "--eps",
            "1e-3",
            "--k",
            "1",
            "--samples",
            "2",
        ]) else {
            panic!()
        };
        let spec = ensemble_spec(&config.ensemble, 2, false).unwrap();
        assert_eq!(spec.describe()["ell"], 4);
        assert_eq!((spec.dims.d_e, spec.dims.d_s), (32, 2));
    }

    #[test]
    fn caps_and_argument_errors() {
        let Command::Sample { config, .. } = parse(&["sample", "--log2-de", "12", "--k", "1"])
        else {
            panic!()
        };
        let err = ensemble_spec(&config.ensemble, 1, false).unwrap_err();
        assert!(matches!(err, CliError::Core(Error::ResourceCap(_))));
        assert!(ensemble_spec(&config.ensemble, 1, true).is_ok());

        let Command::Sample { config, .. } =
            parse(&["sample", "--ensemble", "design", "--n", "13"])
        else {
            panic!()
        };
        assert!(matches!(
            ensemble_spec(&config.ensemble, 1, false).unwrap_err(),
            CliError::Core(Error::ResourceCap(_))
        ));

        let Command::Sample { config, .. } = parse(&["sample"]) else {
            panic!()
        };
        assert!(matches!(
            ensemble_spec(&config.ensemble, 1, false).unwrap_err(),
            CliError::Usage(_)
        ));
        let Command::Sample { config, .. } =
            parse(&["sample", "--ensemble", "design", "--n", "4", "--ds", "3"])
        else {
            panic!()
        };
        assert!(ensemble_spec(&config.ensemble, 1, false).is_err());
    }

    #[test]
    fn process_dump_parses_back() {
        let Command::ProcessDump { config, .. } = parse(&[
            "process-dump",
            "--log2-de",
            "1",
            "--k",
            "1",
            "--index",
            "3",
            "--seed",
            "5",
        ]) else {
            panic!()
        };
        let text = process_dump(&config, false).unwrap();
        let upsilon = ProcessChoi::from_text(&strip_header(&text)).unwrap();
        let spec = ensemble_spec(&config.ensemble, 4, false).unwrap();
        assert_eq!(upsilon.matrix(), sample_process(&spec, 3).unwrap().matrix());
        assert_eq!(parse_header(&text).unwrap(), RunConfig::ProcessDump(config));
    }
}
