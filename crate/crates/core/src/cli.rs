//! Command-line interface.

use std::io::Write;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::examples;
use crate::flow::{integrate, Start, Until};
use crate::global_charts::{enumerate_critseqs, Charts, Terminal};
use crate::gluing::{glue, Factor};
use crate::linalg::{normalize, Vector};
use crate::model::{MorseModel, Pt};
use crate::trajectory::{metric_terms, Trajectory};
use crate::verify::{chart_dump, run_suite, Suite};

#[derive(Parser, Debug)]
#[command(name = "morsechart", version, about = "Compactified trajectory spaces of Morse–Smale flow models")]
pub struct Cli {
    /// Configuration file of key = value settings.
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Override a configuration key (key=value), repeatable.
    #[arg(long = "set", global = true)]
    pub set: Vec<String>,
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample the flow: CSV of time, coordinates and region.
    Flow {
        model: String,
        /// CP:X:Y chart point (comma-separated coordinates) or ambient:A.
        #[arg(long, allow_hyphen_values = true)]
        start: String,
        /// time:T, entry:CP, exit:CP or level:C.
        #[arg(long, allow_hyphen_values = true)]
        until: String,
    },
    /// Table of the critical sequences between two ends (critical point id or X).
    Critseqs {
        model: String,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Trajectory distance between two trajectory JSON files.
    Distance {
        model: String,
        t1: String,
        t2: String,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Glue broken trajectories: JSON of the glued trajectory.
    Glue {
        model: String,
        /// Comma-separated ids p₋,q₁,…,q_k,p₊.
        #[arg(long)]
        seq: String,
        /// Comma-separated gluing parameters, one per intermediate point.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        taus: String,
        /// Semicolon-separated segment elements: #i (i-th isolated element) or an exit direction.
        #[arg(long, allow_hyphen_values = true)]
        factors: String,
        /// Samples per leg in the output.
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Run verification suites and print pass/fail with residual tables.
    Verify {
        model: String,
        #[arg(long, default_value = "all")]
        suite: String,
        /// Chart constraint t.
        #[arg(long)]
        t: Option<f64>,
        /// Tolerance override name=value (e.g. assoc=1e-6), repeatable.
        #[arg(long)]
        tol: Vec<String>,
        /// Write the JSON report to this file.
        #[arg(long)]
        json: Option<String>,
    },
    /// Chart dump JSON of the sequences between two ends.
    ChartDump {
        model: String,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// CSV of the sampled image of a trajectory JSON file.
    ExportPlot { traj: String },
}

/// Run the CLI on `args`; returns the exit code (0 pass, 1 verification failure, 2 usage error).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn config_of(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for s in &cli.set {
        cfg.set(s)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn numbers(s: &str) -> Result<Vector> {
    if s.trim().is_empty() {
        return Ok(vec![]);
    }
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| Error::Schema(format!("not a number: '{v}'")))).collect()
}

fn parse_start(model: &MorseModel, s: &str) -> Result<Start> {
    if let Some(a) = s.strip_prefix("ambient:") {
        return Ok(Start::Ambient(numbers(a)?));
    }
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Schema(format!("start '{s}' is neither CP:X:Y nor ambient:A")));
    }
    let cp = model.find(parts[0])?;
    Ok(Start::Chart { cp, pt: Pt::new(numbers(parts[1])?, numbers(parts[2])?) })
}

fn parse_until(model: &MorseModel, s: &str) -> Result<Until> {
    let (k, v) = s.split_once(':').ok_or_else(|| Error::Schema(format!("until '{s}' needs kind:value")))?;
    let num = || v.parse::<f64>().map_err(|_| Error::Schema(format!("not a number: '{v}'")));
    match k {
        "time" => Ok(Until::Time(num()?)),
        "level" => Ok(Until::Level(num()?)),
        "entry" => Ok(Until::Entry(model.find(v)?)),
        "exit" => Ok(Until::Exit(model.find(v)?)),
        _ => Err(Error::Schema(format!("unknown stop condition '{k}'"))),
    }
}

fn terminal(model: &MorseModel, s: &str) -> Result<Terminal> {
    if s == "X" {
        Ok(Terminal::X)
    } else {
        Ok(Terminal::Crit(model.find(s)?))
    }
}

fn read_traj(path: &str) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    Trajectory::from_json(&serde_json::from_str(&text)?)
}

fn tol_key(name: &str) -> String {
    if name.starts_with("tol_") || name == "min_alpha" {
        name.to_string()
    } else if name == "alpha" {
        "min_alpha".into()
    } else {
        format!("tol_{name}")
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = config_of(&cli)?;
    match cli.command {
        Command::Flow { model, start, until } => {
            let m = examples::load(&model)?;
            let fs = integrate(&m, &parse_start(&m, &start)?, parse_until(&m, &until)?)?;
            write!(out, "{}", fs.to_csv())?;
        }
        Command::Critseqs { model, from, to } => {
            let m = examples::load(&model)?;
            let ctx = Charts::with_params(&m, cfg.chart_params(&m))?;
            let seqs = enumerate_critseqs(&m, &ctx.conn, terminal(&m, &from)?, terminal(&m, &to)?);
            writeln!(out, "{:>3}  {:>2}  sequence", "#", "k")?;
            for (i, s) in seqs.iter().enumerate() {
                writeln!(out, "{:>3}  {:>2}  {}", i, s.k(), s.label(&m))?;
            }
        }
        Command::Distance { model, t1, t2, samples } => {
            let m = examples::load(&model)?;
            let (a, b) = (read_traj(&t1)?, read_traj(&t2)?);
            let terms = metric_terms(&m, &a, &b, samples.unwrap_or(cfg.samples_metric));
            writeln!(out, "{:.12e}", terms.total())?;
        }
        Command::Glue { model, seq, taus, factors, samples } => {
            let m = examples::load(&model)?;
            let ids: Vec<usize> = seq.split(',').map(|s| m.find(s.trim())).collect::<Result<_>>()?;
            if ids.len() < 2 {
                return Err(Error::Schema("a sequence needs two ends".into()));
            }
            let (a, b) = (ids[0], *ids.last().unwrap());
            let pts = &ids[1..ids.len() - 1];
            let taus = numbers(&taus)?;
            let ctx = Charts::with_params(&m, cfg.chart_params(&m))?;
            let fs: Vec<&str> = factors.split(';').collect();
            if fs.len() != pts.len() + 1 {
                return Err(Error::Schema(format!("{} factors given, {} needed", fs.len(), pts.len() + 1)));
            }
            let mut chain = vec![a];
            chain.extend(pts);
            chain.push(b);
            let mut fac = Vec::new();
            for (f, w) in fs.iter().zip(chain.windows(2)) {
                let u = if let Some(i) = f.trim().strip_prefix('#') {
                    let i: usize = i.parse().map_err(|_| Error::Schema(format!("bad element index '{f}'")))?;
                    ctx.conn
                        .isolated(w[0], w[1])
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::Schema(format!("no isolated element #{i} from {} to {}", m.id(w[0]), m.id(w[1]))))?
                } else {
                    normalize(&numbers(f)?).ok_or_else(|| Error::Schema("zero direction".into()))?
                };
                fac.push(Factor::unbroken(u));
            }
            let g = glue(&ctx, a, pts, b, &taus, &fac)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&g.to_json(&m, samples))?)?;
        }
        Command::Verify { model, suite, t, tol, json } => {
            let m = examples::load(&model)?;
            let suite: Suite = suite.parse()?;
            if let Some(t) = t {
                cfg.t = Some(t);
            }
            for s in &tol {
                let (k, v) = s.split_once('=').ok_or_else(|| Error::Schema(format!("--tol expects name=value, got '{s}'")))?;
                cfg.set(&format!("{}={v}", tol_key(k.trim())))?;
            }
            let report = run_suite(&m, suite, &cfg)?;
            write!(out, "{}", report.render())?;
            if let Some(p) = json {
                std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
            }
            return Ok(if report.passed() { 0 } else { 1 });
        }
        Command::ChartDump { model, from, to } => {
            let m = examples::load(&model)?;
            let ctx = Charts::with_params(&m, cfg.chart_params(&m))?;
            let v = chart_dump(&ctx, terminal(&m, &from)?, terminal(&m, &to)?, &cfg);
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        Command::ExportPlot { traj } => {
            let text = std::fs::read_to_string(&traj)?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let samples: Vec<Vec<Vector>> = serde_json::from_value(
                v.get("samples").cloned().ok_or_else(|| Error::Schema("trajectory JSON has no samples".into()))?,
            )?;
            let dim = samples.iter().flatten().map(|p| p.len()).max().unwrap_or(0);
            let coords: Vec<String> = (0..dim).map(|i| format!("c{i}")).collect();
            writeln!(out, "leg,index,{}", coords.join(","))?;
            for (l, pl) in samples.iter().enumerate() {
                for (i, p) in pl.iter().enumerate() {
                    let c: Vec<String> = p.iter().map(|x| format!("{x:.12e}")).collect();
                    writeln!(out, "{l},{i},{}", c.join(","))?;
                }
            }
        }
    }
    Ok(0)
}
