//! Experiment harness: one subcommand per solver, CSV results with a JSON
//! manifest next to them.
//!
//! Exit codes: 0 on success, 1 when parameters are inconsistent or a check
//! fails, 2 on usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, Command};

pub mod commands;
pub mod manifest;
pub mod settings;
pub mod table;

use manifest::{write_manifest, write_table, ExperimentManifest};
use settings::{read_config, Settings};
use table::Table;

/// Default output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "STIRRING_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Invalid(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid(_) | CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<stirring::Error> for CliError {
    fn from(e: stirring::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Result of a subcommand before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub summary: Vec<(String, String)>,
    /// Set when a check ran to completion but missed its tolerance.
    pub failure: Option<String>,
}

impl Outcome {
    pub fn new(table: Table) -> Self {
        Outcome {
            table,
            summary: Vec::new(),
            failure: None,
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }
}

type Handler = fn(&Settings) -> Result<Outcome, CliError>;

pub struct Subcommand {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [&'static str],
    pub run: Handler,
}

const COMMON: [&str; 4] = ["seed", "threads", "out", "config"];

pub const SUBCOMMANDS: [Subcommand; 9] = [
    Subcommand {
        name: "simulate",
        about: "Site marginals of the full process by Monte Carlo",
        keys: &["n", "k", "j", "t", "eta0", "replicas"],
        run: commands::simulate,
    },
    Subcommand {
        name: "pde",
        about: "Discrete density equation on the lattice",
        keys: &["n", "k", "j", "t", "u0", "tol"],
        run: commands::pde,
    },
    Subcommand {
        name: "hydro",
        about: "Boundary traces of the macroscopic system",
        keys: &["n", "k", "j", "t", "u0", "h", "tol"],
        run: commands::hydro,
    },
    Subcommand {
        name: "vfn",
        about: "Monte Carlo v-functions and block averages",
        keys: &["n", "k", "j", "t", "eta0", "sites", "replicas", "mode", "a", "delta"],
        run: commands::vfn,
    },
    Subcommand {
        name: "exact",
        about: "Exact checks on small lattices",
        keys: &["n", "k", "j", "t", "eta0", "check", "samples", "max-size", "dt", "tol"],
        run: commands::exact,
    },
    Subcommand {
        name: "duality",
        about: "Monte Carlo duality between the forward and the dual process",
        keys: &["n", "t", "eta0", "sites", "replicas"],
        run: commands::duality,
    },
    Subcommand {
        name: "couple",
        about: "Stirring particles coupled to independent walkers",
        keys: &["n", "t", "x0", "sigma", "replicas", "zeta"],
        run: commands::couple,
    },
    Subcommand {
        name: "pairstats",
        about: "Meeting statistics of two stirring particles",
        keys: &["n", "x1", "x2", "t", "replicas", "zeta", "fit-lo", "fit-hi"],
        run: commands::pairstats,
    },
    Subcommand {
        name: "estimates",
        about: "Iterated singular integrals and their bound",
        keys: &["t", "n-max"],
        run: commands::estimates,
    },
];

fn command() -> Command {
    let mut cmd = Command::new("stirring")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Stirring process with boundary reservoirs")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in &SUBCOMMANDS {
        let mut c = Command::new(sub.name).about(sub.about);
        for key in sub.keys.iter().chain(&COMMON) {
            c = c.arg(
                Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .allow_hyphen_values(true),
            );
        }
        cmd = cmd.subcommand(c);
    }
    cmd
}

/// Parsed subcommand with its merged settings.
pub struct Invocation {
    pub subcommand: &'static Subcommand,
    pub settings: Settings,
    pub out_dir: PathBuf,
}

/// `Ok(None)` when help or version was printed.
pub fn parse<I, T>(argv: I) -> Result<Option<Invocation>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    Ok(None)
                }
                _ => Err(CliError::Usage(e.render().to_string())),
            }
        }
    };
    let (name, sub_m) = matches.subcommand().expect("subcommand required");
    let sub = SUBCOMMANDS.iter().find(|s| s.name == name).expect("registered");
    let mut cli = BTreeMap::new();
    for key in sub.keys.iter().chain(&COMMON) {
        if let Some(v) = sub_m.get_one::<String>(key) {
            cli.insert(key.to_string(), v.clone());
        }
    }
    let file = match cli.get("config") {
        Some(path) => read_config(path.as_ref(), name)?,
        None => BTreeMap::new(),
    };
    let allowed: Vec<&str> = sub.keys.iter().chain(&COMMON).copied().collect();
    let settings = Settings::merge(name, &allowed, file, cli)?;
    let out_dir = settings
        .raw("out")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Some(Invocation {
        subcommand: sub,
        settings,
        out_dir,
    }))
}

/// Run a parsed invocation and write its table and manifest.
pub fn execute(inv: &Invocation) -> Result<ExperimentManifest, CliError> {
    let s = &inv.settings;
    let seed: u64 = s.get("seed", "1")?;
    let threads: usize = s.get("threads", "0")?;
    let start = Instant::now();
    let outcome = if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
        pool.install(|| (inv.subcommand.run)(s))?
    } else {
        (inv.subcommand.run)(s)?
    };
    let wall = start.elapsed().as_secs_f64();
    let (path, record) = write_table(&inv.out_dir, inv.subcommand.name, &outcome.table)?;
    let mut summary: BTreeMap<String, String> = outcome.summary.iter().cloned().collect();
    if let Some(f) = &outcome.failure {
        summary.insert("failure".into(), f.clone());
    }
    let m = ExperimentManifest {
        tool: "stirring".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: inv.subcommand.name.into(),
        params: s.used(),
        seed,
        wall_clock_seconds: wall,
        outputs: vec![record],
        summary,
    };
    let mpath = write_manifest(&inv.out_dir, &m)?;
    log::info!("wrote {} and {}", path.display(), mpath.display());
    for (k, v) in &outcome.summary {
        println!("{k}: {v}");
    }
    println!("table: {}", path.display());
    println!("manifest: {}", mpath.display());
    if let Some(f) = outcome.failure {
        return Err(CliError::Invalid(format!("check failed: {f}")));
    }
    Ok(m)
}

/// Parse, run and report; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse(argv).and_then(|inv| match inv {
        Some(inv) => execute(&inv).map(|_| ()),
        None => Ok(()),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprint!("{}{}", m, if m.ends_with('\n') { "" } else { "\n" }),
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}

/// Least-squares slope of `log y` against `log x` over the points with
/// `lo <= x <= hi` and `y > 0`; `None` with fewer than three such points.
pub fn loglog_slope(points: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x >= lo * (1.0 - 1e-12) && *x <= hi * (1.0 + 1e-12) && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}
