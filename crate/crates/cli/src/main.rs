use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use polybrud_cli::config::{self, LeafKey};
use polybrud_cli::{parse_config, run, RunOptions, LEAF_KEYS};
use polybrud_core::datasets;

fn leaf_arg(leaf: &LeafKey) -> Arg {
    let flag = leaf.flag();
    Arg::new(leaf.key)
        .long(flag)
        .value_name("VALUE")
        .help(format!("{} [default: {}]", leaf.help, leaf.default))
        .help_heading("Config overrides")
}

fn common(cmd: Command, leaves: &[&'static LeafKey]) -> Command {
    cmd.arg(Arg::new("config").value_name("CONFIG").value_parser(value_parser!(PathBuf)).help("TOML config file"))
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("override any dotted config key, e.g. --set learn.steps=1000"),
        )
        .arg(
            Arg::new("seed")
                .long("seed")
                .env("POLYBRUD_SEED")
                .value_parser(value_parser!(u64))
                .help("default seed when the config names none"),
        )
        .args(leaves.iter().map(|l| leaf_arg(l)))
}

fn cli() -> Command {
    let all: Vec<&'static LeafKey> = LEAF_KEYS.iter().collect();
    let dataset_only: Vec<&'static LeafKey> = LEAF_KEYS.iter().filter(|l| l.key.starts_with("dataset.")).collect();
    let run_args = |cmd: Command| {
        common(cmd, &all)
            .arg(
                Arg::new("jobs")
                    .long("jobs")
                    .short('j')
                    .value_parser(value_parser!(usize))
                    .default_value("0")
                    .help("parallel runs; 0 uses every core"),
            )
            .arg(Arg::new("dry-run").long("dry-run").action(ArgAction::SetTrue).help("list outputs without running or writing"))
    };
    Command::new("polybrud")
        .about("Offline multi-agent policy gradients on polynomial games")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .subcommand(run_args(Command::new("run").about("Run an experiment config")))
        .subcommand(run_args(Command::new("analyze").about("Closed-form fixed-point report and field grid")))
        .subcommand(
            common(Command::new("gen-dataset").about("Write a dataset CSV"), &dataset_only).arg(
                Arg::new("out")
                    .long("out")
                    .short('o')
                    .value_parser(value_parser!(PathBuf))
                    .help("output file [default: stdout]"),
            ),
        )
}

fn overrides(m: &ArgMatches) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    for leaf in LEAF_KEYS {
        if let Ok(Some(v)) = m.try_get_one::<String>(leaf.key) {
            out.push((leaf.key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn cmd_run(m: &ArgMatches, force_analyze: bool) -> Result<()> {
    let mut ov = overrides(m)?;
    if force_analyze {
        ov.push(("experiment".into(), "Analyze".into()));
    }
    let cfg = parse_config(m.get_one::<PathBuf>("config").map(|p| p.as_path()), &ov, m.get_one::<u64>("seed").copied())?;
    let opts = RunOptions {
        jobs: *m.get_one::<usize>("jobs").unwrap(),
        dry_run: m.get_flag("dry-run"),
    };
    let manifest = run(&cfg, &opts)?;
    if opts.dry_run {
        println!("dry run: {} would write {} files to {}", cfg.experiment, manifest.files.len(), cfg.output_dir.display());
        for f in &manifest.files {
            println!("  {}", f.path);
        }
    } else {
        println!(
            "{}: wrote {} files to {} in {:.0} ms",
            cfg.experiment,
            manifest.files.len() + 1,
            cfg.output_dir.display(),
            manifest.total_wall_ms
        );
    }
    Ok(())
}

fn cmd_gen_dataset(m: &ArgMatches) -> Result<()> {
    let mut table = match m.get_one::<PathBuf>("config") {
        Some(p) => config::load_table(p)?,
        None => toml::Table::new(),
    };
    for (k, v) in overrides(m)? {
        config::set_dotted(&mut table, &k, config::parse_value(&v))?;
    }
    if let Some(seed) = m.get_one::<u64>("seed") {
        let has_seed = table.get("dataset").and_then(|d| d.get("seed")).is_some();
        if !has_seed {
            config::set_dotted(&mut table, "dataset.seed", toml::Value::Integer(*seed as i64))?;
        }
    }
    // only the dataset section matters here
    let mut minimal = toml::Table::new();
    minimal.insert("experiment".into(), "OfflineUniform".into());
    minimal.insert("game".into(), toml::toml! { kind = "Decoupled" }.into());
    if let Some(d) = table.get("dataset") {
        minimal.insert("dataset".into(), d.clone());
    }
    let cfg = config::from_table(minimal, None)?;
    let spec = cfg.dataset.context("dataset section missing")?;
    let samples = polybrud_core::generate(&spec)?;
    match m.get_one::<PathBuf>("out") {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            datasets::write_csv(&samples, std::io::BufWriter::new(file))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            datasets::write_csv(&samples, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let result = match m.subcommand() {
        Some(("run", sub)) => cmd_run(sub, false),
        Some(("analyze", sub)) => cmd_run(sub, true),
        Some(("gen-dataset", sub)) => cmd_gen_dataset(sub),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
