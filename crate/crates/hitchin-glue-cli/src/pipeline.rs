//! Command implementations: load-or-solve profiles, run the requested
//! computation, and write deterministic artifacts plus a timestamped
//! metadata sidecar (`run_meta.json`, the only file carrying wall-clock
//! data).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hitchin_glue::{
    build_atilde, connection_growth, decay_csv, error_l2_blocks, field_samples_csv, fit_decay,
    growth_csv, indicial_csv, indicial_spectrum, limit_csv, metric_profile_csv, model_metric,
    model_unitary_pair, rescaled_laplacian_limit, solution_csv, solve_toda, validate_strata,
    QuadratureSpec, SolverConfig, StrataCount, TodaFamily,
};
use num_complex::Complex64;

use crate::args::{self, Cli, Command, SolverArgs};
use crate::cache;
use crate::error::CliError;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cache_dir = cache::resolve_dir(cli.cache, cli.no_cache);
    let out = cli.out;
    match cli.command {
        Command::SolveToda { k, solver } => solve_toda_cmd(k, &solver, &out, cache_dir),
        Command::Model {
            partition,
            t,
            r_min,
            r_max,
            points,
            solver,
        } => model_cmd(&partition, t, r_min, r_max, points, &solver, &out, cache_dir),
        Command::ErrorSweep {
            partition,
            t,
            residual_threshold,
            solver,
        } => error_sweep_cmd(&partition, &t, residual_threshold, &solver, &out, cache_dir),
        Command::Indicial { partition, j } => indicial_cmd(&partition, j, &out),
        Command::Strata {
            n,
            g,
            n2,
            n3,
            n4,
            n5,
            n6,
            n7,
            n8,
            n9,
            n10,
            n11,
            n12,
        } => strata_cmd(
            n,
            g,
            &[
                (2, n2),
                (3, n3),
                (4, n4),
                (5, n5),
                (6, n6),
                (7, n7),
                (8, n8),
                (9, n9),
                (10, n10),
                (11, n11),
                (12, n12),
            ],
        ),
        Command::Growth {
            partition,
            t,
            solver,
        } => growth_cmd(&partition, &t, &solver, &out, cache_dir),
        Command::LimitCheck {
            partition,
            j,
            t,
            samples,
            solver,
        } => limit_check_cmd(&partition, j, &t, &samples, &solver, &out, cache_dir),
    }
}

/// Cache bookkeeping for the metadata sidecar.
struct CacheTrace {
    hits: Vec<usize>,
    misses: Vec<usize>,
}

/// Loads every requested rank, from cache where possible, solving and
/// backfilling otherwise. A failed cache write warns and keeps going.
fn load_family(
    ranks: &[usize],
    config: &SolverConfig,
    cache_dir: Option<&Path>,
) -> Result<(TodaFamily, CacheTrace), CliError> {
    let mut family = TodaFamily::new();
    let mut trace = CacheTrace {
        hits: Vec::new(),
        misses: Vec::new(),
    };
    for &k in ranks {
        if let Some(dir) = cache_dir {
            if let Some(sol) = cache::lookup(dir, k, config) {
                println!(
                    "K={k}: cache hit (residual {:.3e})",
                    sol.residual_norm()
                );
                trace.hits.push(k);
                family.insert(sol);
                continue;
            }
        }
        let sol = solve_toda(k, config)?;
        println!("K={k}: solved, residual {:.3e}", sol.residual_norm());
        trace.misses.push(k);
        if let Some(dir) = cache_dir {
            if let Err(e) = cache::store(dir, &sol) {
                eprintln!("warning: cache write failed: {e}");
            }
        }
        family.insert(sol);
    }
    Ok((family, trace))
}

fn write_artifact(out: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    cache::atomic_write(&path, bytes)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn write_meta(
    out: &Path,
    command: &str,
    config_hash: Option<&str>,
    artifacts: &[&str],
    trace: Option<&CacheTrace>,
) -> Result<(), CliError> {
    let unix_time = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "command": command,
        "unix_time": unix_time,
        "config_hash": config_hash,
        "artifacts": artifacts,
        "cache_hits": trace.map(|t| t.hits.clone()).unwrap_or_default(),
        "cache_misses": trace.map(|t| t.misses.clone()).unwrap_or_default(),
    });
    let bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    std::fs::create_dir_all(out)?;
    cache::atomic_write(&out.join("run_meta.json"), &bytes)?;
    Ok(())
}

fn solve_toda_cmd(
    k: usize,
    solver: &SolverArgs,
    out: &Path,
    cache_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let config = solver.to_config();
    let (family, trace) = load_family(&[k], &config, cache_dir.as_deref())?;
    let sol = family.require(k)?;
    let json_name = format!("toda_K{k}.json");
    let csv_name = format!("toda_K{k}.csv");
    let record = serde_json::to_vec_pretty(&sol.to_record()).expect("record serializes");
    write_artifact(out, &json_name, &record)?;
    write_artifact(out, &csv_name, solution_csv(sol).as_bytes())?;
    write_meta(
        out,
        "solve-toda",
        Some(&cache::config_hash(&config)),
        &[&json_name, &csv_name],
        Some(&trace),
    )
}

#[allow(clippy::too_many_arguments)]
fn model_cmd(
    partition: &str,
    t: f64,
    r_min: f64,
    r_max: f64,
    points: usize,
    solver: &SolverArgs,
    out: &Path,
    cache_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let p = args::parse_partition(partition)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(CliError::parse(format!("t must be positive, got {t}")));
    }
    if !(r_min > 0.0 && r_min < r_max) || points < 2 {
        return Err(CliError::parse(
            "need 0 < r-min < r-max and at least 2 points",
        ));
    }
    let config = solver.to_config();
    let (family, trace) = load_family(&p.toda_ranks(), &config, cache_dir.as_deref())?;

    let step = (r_max / r_min).ln() / (points - 1) as f64;
    let radii: Vec<f64> = (0..points)
        .map(|m| (r_min.ln() + step * m as f64).exp())
        .collect();
    let blocks = p.blocks().len();
    let mut rows = Vec::with_capacity(points);
    for &r in &radii {
        rows.push(model_metric(&p, &family, t, &vec![r; blocks])?);
    }

    // The unitary pair on eight rays at the geometric mean radius.
    let r_sample = (r_min * r_max).sqrt();
    let mut samples = Vec::with_capacity(8);
    for q in 0..8 {
        let z = Complex64::from_polar(r_sample, std::f64::consts::TAU * q as f64 / 8.0);
        samples.push(model_unitary_pair(&p, &family, t, z)?);
    }

    write_artifact(
        out,
        "model_profile.csv",
        metric_profile_csv(&radii, &rows).as_bytes(),
    )?;
    write_artifact(
        out,
        "model_samples.csv",
        field_samples_csv(&samples).as_bytes(),
    )?;
    write_meta(
        out,
        "model",
        Some(&cache::config_hash(&config)),
        &["model_profile.csv", "model_samples.csv"],
        Some(&trace),
    )
}

fn error_sweep_cmd(
    partition: &str,
    t_spec: &str,
    residual_threshold: f64,
    solver: &SolverArgs,
    out: &Path,
    cache_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let p = args::parse_partition(partition)?;
    let t_values = args::parse_t_values(t_spec)?;
    if t_values.len() < 3 {
        return Err(CliError::parse("the decay fit needs at least 3 scales"));
    }
    if !(residual_threshold > 0.0) {
        return Err(CliError::parse("residual threshold must be positive"));
    }
    let config = solver.to_config();
    let (family, trace) = load_family(&p.toda_ranks(), &config, cache_dir.as_deref())?;

    let spec = QuadratureSpec::default();
    let mut totals = Vec::with_capacity(t_values.len());
    let mut per_block = Vec::with_capacity(t_values.len());
    for &t in &t_values {
        let blocks = error_l2_blocks(&p, &family, t, &spec)?;
        totals.push(blocks.iter().map(|b| b * b).sum::<f64>().sqrt());
        per_block.push(blocks);
    }
    let mut report = fit_decay(&t_values, &totals, residual_threshold)?;
    report.config_hash = Some(cache::config_hash(&config));
    println!(
        "delta {:.6} residual {:.6} {}",
        report.delta,
        report.residual,
        if report.pass { "PASS" } else { "FAIL" }
    );

    write_artifact(
        out,
        "decay.csv",
        decay_csv(&t_values, &totals, &per_block).as_bytes(),
    )?;
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_artifact(out, "decay_report.json", &json)?;
    write_meta(
        out,
        "error-sweep",
        Some(&cache::config_hash(&config)),
        &["decay.csv", "decay_report.json"],
        Some(&trace),
    )
}

fn indicial_cmd(partition: &str, j: usize, out: &Path) -> Result<(), CliError> {
    let p = args::parse_partition(partition)?;
    if j < 1 {
        return Err(CliError::parse("threshold J must be at least 1"));
    }
    let spec = build_atilde(&p, j);
    let ind = indicial_spectrum(&spec);
    fn fmt_roots<T: std::fmt::Display>(set: &[T]) -> String {
        if set.is_empty() {
            "none".to_string()
        } else {
            set.iter()
                .map(|q| q.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
    println!("S0: {}", fmt_roots(&ind.s0));
    println!("Sinf: {}", fmt_roots(&ind.sinf));
    write_artifact(out, "indicial.csv", indicial_csv(&ind).as_bytes())?;
    write_meta(out, "indicial", None, &["indicial.csv"], None)
}

fn strata_cmd(n: usize, g: usize, counts: &[(usize, Option<u64>)]) -> Result<(), CliError> {
    if n < 2 {
        return Err(CliError::parse(format!("rank n must be at least 2, got {n}")));
    }
    let mut map = BTreeMap::new();
    for &(k, nk) in counts {
        let Some(nk) = nk else { continue };
        if k > n && nk > 0 {
            return Err(CliError::parse(format!(
                "count N{k} exceeds the rank (n = {n})"
            )));
        }
        map.insert(k, nk);
    }
    let s = StrataCount { n, g, counts: map };
    println!("{}", if validate_strata(&s) { "VALID" } else { "INVALID" });
    Ok(())
}

fn growth_cmd(
    partition: &str,
    t_spec: &str,
    solver: &SolverArgs,
    out: &Path,
    cache_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let p = args::parse_partition(partition)?;
    let t_values = args::parse_t_values(t_spec)?;
    if t_values.len() < 2 || t_values[0] < 1.0 {
        return Err(CliError::parse(
            "growth needs at least 2 scales, all >= 1",
        ));
    }
    let config = solver.to_config();
    let (family, trace) = load_family(&p.toda_ranks(), &config, cache_dir.as_deref())?;
    let table = connection_growth(&p, &family, &t_values)?;
    println!(
        "exponent {:.6}; sup|A| in [{:.6}, {:.6}]",
        table.exponent,
        table.sup_a.iter().cloned().fold(f64::MAX, f64::min),
        table.sup_a.iter().cloned().fold(f64::MIN, f64::max),
    );
    write_artifact(out, "growth.csv", growth_csv(&table).as_bytes())?;
    let json = serde_json::to_vec_pretty(&table).expect("table serializes");
    write_artifact(out, "growth.json", &json)?;
    write_meta(
        out,
        "growth",
        Some(&cache::config_hash(&config)),
        &["growth.csv", "growth.json"],
        Some(&trace),
    )
}

#[allow(clippy::too_many_arguments)]
fn limit_check_cmd(
    partition: &str,
    j: usize,
    t_spec: &str,
    samples_spec: &str,
    solver: &SolverArgs,
    out: &Path,
    cache_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let p = args::parse_partition(partition)?;
    if j < 1 {
        return Err(CliError::parse("threshold J must be at least 1"));
    }
    let t_values = args::parse_t_values(t_spec)?;
    let samples = args::parse_f64_list(samples_spec)?;
    if samples.is_empty() || samples.iter().any(|&w| !(0.1..=2.0).contains(&w)) {
        return Err(CliError::parse("sample radii must lie in [0.1, 2]"));
    }
    let config = solver.to_config();
    let (family, trace) = load_family(&p.toda_ranks(), &config, cache_dir.as_deref())?;
    let table = rescaled_laplacian_limit(&p, &family, j, &t_values, &samples)?;
    let monotone = table.max_per_t.windows(2).all(|w| w[1] <= w[0]);
    println!(
        "max deviation per scale: {}; monotone decreasing: {}",
        table
            .max_per_t
            .iter()
            .map(|d| format!("{d:.3e}"))
            .collect::<Vec<_>>()
            .join(", "),
        if monotone { "yes" } else { "no" }
    );
    write_artifact(out, "limit.csv", limit_csv(&table).as_bytes())?;
    let json = serde_json::to_vec_pretty(&table).expect("table serializes");
    write_artifact(out, "limit.json", &json)?;
    write_meta(
        out,
        "limit-check",
        Some(&cache::config_hash(&config)),
        &["limit.csv", "limit.json"],
        Some(&trace),
    )
}
