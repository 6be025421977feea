use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hitchin_glue::{ClusterBlock, ClusterPartition, SolverConfig};
use num_complex::Complex64;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "hitchin-glue",
    version,
    about = "Toda profiles, model fields, gluing-error sweeps, and linearization reports"
)]
pub struct Cli {
    /// Directory artifacts are written into (created if missing).
    #[arg(long, default_value = ".", global = true)]
    pub out: PathBuf,

    /// Toda solution cache directory. Default `.hitchin-glue-cache`;
    /// the HITCHIN_GLUE_CACHE environment variable overrides both.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,

    /// Disable the solution cache for this run.
    #[arg(long, global = true)]
    pub no_cache: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the rank-K radial Toda profile and export it as JSON + CSV.
    SolveToda {
        /// Cluster size K >= 2.
        #[arg(long = "K", value_name = "K")]
        k: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Sample the model metric diagonal and the unitary model pair.
    Model {
        /// Partition descriptor, e.g. "3,2,1" or "3@0+1i,2@-1".
        #[arg(long)]
        partition: String,
        /// Scale parameter t > 0.
        #[arg(long)]
        t: f64,
        /// Inner radius of the profile table.
        #[arg(long, default_value_t = 1e-3)]
        r_min: f64,
        /// Outer radius of the profile table.
        #[arg(long, default_value_t = 2.0)]
        r_max: f64,
        /// Radial nodes in the profile table (log-spaced).
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Sweep the gluing error over t and fit its exponential decay.
    ErrorSweep {
        /// Partition descriptor.
        #[arg(long)]
        partition: String,
        /// Scales as start:stop:step or a comma list, e.g. "2:10:2".
        #[arg(long)]
        t: String,
        /// Log-space RMS misfit the fit must stay under to pass.
        #[arg(long, default_value_t = 0.2)]
        residual_threshold: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Exact indicial-root spectra of the decoupled linearized operator.
    Indicial {
        /// Partition descriptor.
        #[arg(long)]
        partition: String,
        /// Threshold cluster size J >= 1.
        #[arg(long)]
        j: usize,
    },
    /// Check ramification counts against the discriminant-degree identity.
    Strata {
        /// Total rank n >= 2.
        #[arg(long)]
        n: usize,
        /// Curve genus.
        #[arg(long)]
        g: usize,
        #[arg(long = "N2")]
        n2: Option<u64>,
        #[arg(long = "N3")]
        n3: Option<u64>,
        #[arg(long = "N4")]
        n4: Option<u64>,
        #[arg(long = "N5")]
        n5: Option<u64>,
        #[arg(long = "N6")]
        n6: Option<u64>,
        #[arg(long = "N7")]
        n7: Option<u64>,
        #[arg(long = "N8")]
        n8: Option<u64>,
        #[arg(long = "N9")]
        n9: Option<u64>,
        #[arg(long = "N10")]
        n10: Option<u64>,
        #[arg(long = "N11")]
        n11: Option<u64>,
        #[arg(long = "N12")]
        n12: Option<u64>,
    },
    /// Sup norms of the connection family and the fitted growth exponent.
    Growth {
        /// Partition descriptor.
        #[arg(long)]
        partition: String,
        /// Scales, all >= 1, as start:stop:step or a comma list.
        #[arg(long, default_value = "1,2,4,8")]
        t: String,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Deviation of the rescaled connection family from its block targets.
    LimitCheck {
        /// Partition descriptor.
        #[arg(long)]
        partition: String,
        /// Threshold cluster size J >= 1.
        #[arg(long)]
        j: usize,
        /// Scales as start:stop:step or a comma list.
        #[arg(long, default_value = "4,16,64")]
        t: String,
        /// Sample radii in [0.1, 2], comma-separated.
        #[arg(long, default_value = "0.1,0.5,1.0,2.0")]
        samples: String,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

/// Profile-solver settings; defaults mirror the library defaults.
#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Newton residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
    /// Newton iteration cap per continuation stage.
    #[arg(long, default_value_t = 50)]
    pub max_iterations: usize,
    /// Grid intervals of the profile solve.
    #[arg(long, default_value_t = 2000)]
    pub grid_points: usize,
    /// Inner truncation radius of the profile grid.
    #[arg(long, default_value_t = 1e-4)]
    pub solver_r_min: f64,
    /// Outer truncation radius of the profile grid.
    #[arg(long, default_value_t = 6.0)]
    pub solver_r_max: f64,
    /// Continuation stages on the nonlinearity amplitude.
    #[arg(long, default_value_t = 1)]
    pub continuation_steps: usize,
}

impl SolverArgs {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            grid_points: self.grid_points,
            r_min: self.solver_r_min,
            r_max: self.solver_r_max,
            continuation_steps: self.continuation_steps,
        }
    }
}

/// Parses a partition descriptor: comma-separated block sizes, each with an
/// optional spectral shift after `@` (e.g. "3,2,1" or "3@0+1i,2@-1,1").
/// Blocks without a shift get the distinct defaults 0, 1, 2, ...
pub fn parse_partition(descriptor: &str) -> Result<ClusterPartition, CliError> {
    let mut blocks = Vec::new();
    for (index, item) in descriptor.split(',').enumerate() {
        let item = item.trim();
        let (size, shift) = match item.split_once('@') {
            Some((size, shift)) => (size, Some(shift)),
            None => (item, None),
        };
        let k: usize = size
            .parse()
            .map_err(|_| CliError::parse(format!("bad block size {size:?} in partition")))?;
        let lambda = match shift {
            Some(s) => parse_complex(s)?,
            None => Complex64::new(index as f64, 0.0),
        };
        blocks.push(ClusterBlock::new(k, lambda));
    }
    Ok(ClusterPartition::new(blocks, 2, 0)?)
}

/// Parses a complex literal in the forms `a`, `bi`, `a+bi`, `a-bi`, `i`,
/// `-i` with plain decimal parts (no exponents in the two-part forms).
pub fn parse_complex(s: &str) -> Result<Complex64, CliError> {
    let s = s.trim();
    let bad = || CliError::parse(format!("bad complex literal {s:?}"));
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix('i') else {
        return s.parse().map(|re| Complex64::new(re, 0.0)).map_err(|_| bad());
    };
    let unit = |sign: &str| match sign {
        "" | "+" => Ok(1.0),
        "-" => Ok(-1.0),
        other => other.parse::<f64>().map_err(|_| bad()),
    };
    // Split at the last sign that is not leading; without one the literal
    // is purely imaginary.
    let split = body
        .char_indices()
        .skip(1)
        .filter(|&(_, c)| c == '+' || c == '-')
        .map(|(idx, _)| idx)
        .last();
    match split {
        Some(idx) => {
            let (re, im) = body.split_at(idx);
            let re: f64 = re.parse().map_err(|_| bad())?;
            Ok(Complex64::new(re, unit(im)?))
        }
        None => Ok(Complex64::new(0.0, unit(body)?)),
    }
}

/// Parses scale samples: either `start:stop:step` (inclusive arithmetic
/// range) or a comma list. The result must be positive, finite, and
/// strictly increasing.
pub fn parse_t_values(s: &str) -> Result<Vec<f64>, CliError> {
    let s = s.trim();
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::parse(format!(
                "bad range {s:?}: expected start:stop:step"
            )));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CliError::parse(format!("bad number {p:?} in range")))
            })
            .collect::<Result<_, _>>()?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || stop < start {
            return Err(CliError::parse(format!(
                "bad range {s:?}: need stop >= start and step > 0"
            )));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|m| start + step * m as f64).collect()
    } else {
        parse_f64_list(s)?
    };
    if values.is_empty() {
        return Err(CliError::parse("no scale values"));
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CliError::parse("scale values must be positive and finite"));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::parse("scale values must be strictly increasing"));
    }
    Ok(values)
}

/// Parses a plain comma-separated float list.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::parse(format!("bad number {p:?} in list")))
        })
        .collect()
}
