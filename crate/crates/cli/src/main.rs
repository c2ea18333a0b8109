use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobiseg::pipeline::{self, PipelineConfig};
use mobiseg::synth::{generate_city, SynthConfig};
use mobiseg::{Error, ErrorKind};
use serde::Serialize;
use toml::{Table, Value};

/// Home-work mobility communities and workplace isolation.
#[derive(Parser)]
#[command(name = "mobiseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voronoi cells, urban-overlap filter and SEL composition.
    Tessellate(PipelineArgs),
    /// Home and work anchors, aggregate and per weekday.
    Infer(PipelineArgs),
    /// Weighted home-work tower networks.
    Network(PipelineArgs),
    /// Louvain communities on the aggregate network or one weekday.
    Communities {
        #[command(flatten)]
        args: PipelineArgs,
        /// Only this weekday (mon..fri); default runs the aggregate and all five days.
        #[arg(long)]
        weekday: Option<String>,
    },
    /// Share of towers keeping their community on each weekday.
    Retention(PipelineArgs),
    /// Real and well-mixed isolation indices per community.
    Isolation(PipelineArgs),
    /// Journey histograms and the simulated isolation index experiment.
    Simulate(PipelineArgs),
    /// Final table with z-distances, plus planted-truth comparison.
    Report(PipelineArgs),
    /// Generate a synthetic city with planted communities.
    Synth(SynthArgs),
    /// Every stage in order, then a manifest.
    RunAll(PipelineArgs),
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Args, Default)]
struct PipelineArgs {
    /// Key-value (TOML) config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set reps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    towers: Option<PathBuf>,
    #[arg(long)]
    urban: Option<PathBuf>,
    #[arg(long)]
    blocks: Option<PathBuf>,
    #[arg(long)]
    pings: Option<PathBuf>,
    #[arg(long)]
    planted: Option<PathBuf>,
    /// Tower coordinates are lon/lat.
    #[arg(long)]
    project: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    home_window: Option<String>,
    #[arg(long)]
    work_window: Option<String>,
    #[arg(long)]
    min_anchor_pings: Option<u32>,
    #[arg(long)]
    anchor_share: Option<f64>,
    /// combined | per_anchor
    #[arg(long)]
    share_rule: Option<String>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    min_size: Option<u64>,
    /// greedy | optimal
    #[arg(long)]
    matching: Option<String>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    bin_dist: Option<f64>,
    #[arg(long)]
    bin_angle: Option<f64>,
    /// Draw distance and angle jointly instead of from the marginals.
    #[arg(long)]
    joint: bool,
    #[arg(long)]
    z_threshold: Option<f64>,
    /// analytic | monte_carlo
    #[arg(long)]
    wii: Option<String>,
    /// tower | community
    #[arg(long)]
    work_unit: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Key-value (TOML) synthetic city config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the city files and a matching pipeline.toml.
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn read_table(path: Option<&Path>) -> Result<Table, Error> {
    match path {
        None => Ok(Table::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// `KEY=VALUE` with VALUE read as a TOML literal, else as a bare string.
fn apply_sets(table: &mut Table, sets: &[String]) -> Result<(), Error> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{s}`")))?;
        let value = format!("v = {v}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(v.to_owned()));
        table.insert(k.trim().to_owned(), value);
    }
    Ok(())
}

fn absolute(p: &Path) -> String {
    std::env::current_dir()
        .map(|d| d.join(p))
        .unwrap_or_else(|_| p.to_path_buf())
        .to_string_lossy()
        .into_owned()
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut t = read_table(self.config.as_deref())?;
        apply_sets(&mut t, &self.set)?;
        let paths = [
            ("out_dir", &self.out),
            ("towers", &self.towers),
            ("urban", &self.urban),
            ("blocks", &self.blocks),
            ("pings", &self.pings),
            ("planted", &self.planted),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                t.insert(k.into(), Value::String(absolute(p)));
            }
        }
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                t.insert(k.into(), v);
            }
        };
        put("project", self.project.then_some(Value::Boolean(true)));
        put("joint", self.joint.then_some(Value::Boolean(true)));
        put("seed", self.seed.map(|s| Value::Integer(s as i64)));
        put("overlap_threshold", self.threshold.map(Value::Float));
        put("home_window", self.home_window.clone().map(Value::String));
        put("work_window", self.work_window.clone().map(Value::String));
        put("min_anchor_pings", self.min_anchor_pings.map(|v| Value::Integer(v.into())));
        put("anchor_share", self.anchor_share.map(Value::Float));
        put("share_rule", self.share_rule.clone().map(Value::String));
        put("resolution", self.resolution.map(Value::Float));
        put("min_size", self.min_size.map(|v| Value::Integer(v as i64)));
        put("matching", self.matching.clone().map(Value::String));
        put("reps", self.reps.map(|v| Value::Integer(v as i64)));
        put("bin_dist", self.bin_dist.map(Value::Float));
        put("bin_angle", self.bin_angle.map(Value::Float));
        put("z_threshold", self.z_threshold.map(Value::Float));
        put("wii", self.wii.clone().map(Value::String));
        put("work_unit", self.work_unit.clone().map(Value::String));

        let mut cfg: PipelineConfig = t.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base = match &self.config {
            Some(p) => p.parent().map(Path::to_path_buf).unwrap_or_default(),
            None => PathBuf::from("."),
        };
        cfg.resolve_relative_to(&base);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json<T: Serialize>(v: &T) {
    let text = serde_json::to_string_pretty(v).expect("serializable summary");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn stage<T: Serialize>(
    args: &PipelineArgs,
    name: &'static str,
    f: impl FnOnce(&PipelineConfig) -> mobiseg::Result<T>,
) -> mobiseg::Result<()> {
    let cfg = args.load()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Config(format!("{}: {e}", cfg.out_dir.display())))?;
    let out = f(&cfg).map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })?;
    print_json(&out);
    Ok(())
}

fn synth(args: &SynthArgs) -> mobiseg::Result<()> {
    let mut t = read_table(args.config.as_deref())?;
    apply_sets(&mut t, &args.set)?;
    if let Some(s) = args.seed {
        t.insert("seed".into(), Value::Integer(s as i64));
    }
    let cfg: SynthConfig = t.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let city = generate_city(&cfg)?;
    city.write_to(&args.out)?;
    print_json(&serde_json::json!({
        "out": args.out,
        "towers": city.sites.len(),
        "planted_towers": city.planted.tower_community.len(),
        "users": city.planted.users.len(),
        "pings": city.pings.len(),
    }));
    Ok(())
}

fn run(cli: Cli) -> mobiseg::Result<()> {
    match cli.command {
        Command::Tessellate(a) => stage(&a, "tessellate", pipeline::stage_tessellate),
        Command::Infer(a) => stage(&a, "infer", pipeline::stage_infer),
        Command::Network(a) => stage(&a, "network", pipeline::stage_network),
        Command::Communities { args, weekday } => {
            let day = weekday.as_deref().map(pipeline::parse_weekday).transpose()?;
            stage(&args, "communities", |cfg| match day {
                Some(d) => pipeline::stage_communities(cfg, Some(d)),
                None => pipeline::stage_all_communities(cfg),
            })
        }
        Command::Retention(a) => stage(&a, "retention", pipeline::stage_retention),
        Command::Isolation(a) => stage(&a, "isolation", pipeline::stage_isolation),
        Command::Simulate(a) => stage(&a, "simulate", |cfg| {
            pipeline::stage_simulate(cfg).map(|s| {
                serde_json::json!({"reps": s.reps, "seed": s.seed, "mean": s.mean, "std": s.std})
            })
        }),
        Command::Report(a) => stage(&a, "report", pipeline::stage_report),
        Command::Synth(a) => synth(&a),
        Command::RunAll(a) => {
            let cfg = a.load()?;
            let manifest = pipeline::run_all(&cfg)?;
            print_json(&manifest.counts);
            Ok(())
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Internal => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
        Err(_) => ExitCode::from(4),
    }
}
