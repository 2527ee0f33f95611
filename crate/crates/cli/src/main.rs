use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use smartlet_core::assembler::{assemble, disassemble};
use smartlet_core::lablet_vm::ProgramWord;
use smartlet_core::optical_link::{manchester_encode, Command, Convention, OpticalFrame};
use smartlet_core::scenarios::bundled;
use smartlet_core::summary::RunSummary;
use smartlet_core::verify::{verify, Verdict};
use smartlet_core::{World, WorldScenario};
use smartlet_service::{Server, ServerConfig};

#[derive(Parser)]
#[command(name = "smartlet", version, about = "Headless smartlet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its event log and summary.
    Run(RunArgs),
    /// Assemble program text into a 58-bit word.
    Assemble {
        #[arg(long = "in")]
        input: PathBuf,
        /// Bit string output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a 58-bit word back into program text.
    Disassemble {
        /// File holding the bit string (or 0x-prefixed hex); stdin when omitted.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare an event log with a golden log.
    Verify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        golden: PathBuf,
    },
    /// Build an optical frame and print its hex form.
    EncodeFrame {
        /// Command byte in hex, e.g. 01 for LOAD.
        #[arg(long)]
        command: String,
        /// 58 payload bits, MSB first; all zero when omitted.
        #[arg(long)]
        payload: Option<String>,
        /// Also write the Manchester waveform (`t_ms level` lines).
        #[arg(long)]
        waveform: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        half_bit_ms: f64,
    },
    /// Host live sessions over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Snapshots per second of simulated time.
        #[arg(long, default_value_t = 30.0)]
        snapshot_rate: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
    scenario: Option<PathBuf>,
    /// Name of a bundled scenario instead of a file.
    #[arg(long)]
    bundled: Option<String>,
    /// Defaults to the scenario's own run length.
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Event log (JSON lines); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON; defaults next to the log as `<stem>.summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Step robots on one thread.
    #[arg(long)]
    sequential: bool,
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_scenario(args: &RunArgs) -> Result<WorldScenario> {
    let mut scenario = match (&args.scenario, &args.bundled) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            WorldScenario::from_toml(&text).with_context(|| format!("{}", path.display()))?
        }
        (None, Some(name)) => bundled(name).with_context(|| format!("no bundled scenario {name:?}"))??,
        (None, None) => bail!("give --scenario or --bundled"),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn run(args: RunArgs) -> Result<()> {
    let scenario = load_scenario(&args)?;
    let ticks = args.ticks.unwrap_or(scenario.ticks);
    log::info!("running {:?} for {ticks} ticks, seed {}", scenario.name, scenario.seed);
    let started = Instant::now();
    let mut world = World::new(&scenario)?;
    world.set_parallel(!args.sequential);
    let log = world.run(ticks)?;
    let mut summary = RunSummary::from_log(&log, ticks);
    summary.wall_time_s = Some(started.elapsed().as_secs_f64());

    write_or_print(args.out.as_deref(), &log.to_jsonl())?;
    let summary_json = serde_json::to_string_pretty(&summary)? + "\n";
    let summary_path = args.summary.or_else(|| {
        let out = args.out.as_ref()?;
        let stem = out.file_stem()?.to_string_lossy();
        Some(out.with_file_name(format!("{stem}.summary.json")))
    });
    match summary_path {
        Some(p) => {
            fs::write(&p, &summary_json).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("{} records, summary in {}", log.records.len(), p.display());
        }
        None => eprint!("{summary_json}"),
    }
    Ok(())
}

fn parse_word(text: &str) -> Result<ProgramWord> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace() && *c != '_').collect();
    if let Some(hex) = compact.strip_prefix("0x") {
        let value = u64::from_str_radix(hex, 16).context("bad hex word")?;
        return Ok(ProgramWord::from_u64(value)?);
    }
    let bits = compact
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => bail!("unexpected character {other:?} in bit string"),
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(ProgramWord::from_bits(&bits)?)
}

fn bit_string(word: ProgramWord) -> String {
    word.bits().into_iter().map(|b| if b { '1' } else { '0' }).collect()
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Run(args) => run(args)?,
        Cmd::Assemble { input, out } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let word = assemble(&text).with_context(|| format!("{}", input.display()))?;
            write_or_print(out.as_deref(), &(bit_string(word) + "\n"))?;
        }
        Cmd::Disassemble { input, out } => {
            let text = match &input {
                Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => std::io::read_to_string(std::io::stdin())?,
            };
            write_or_print(out.as_deref(), &disassemble(parse_word(&text)?)?)?;
        }
        Cmd::Verify { log, golden } => {
            let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
            match verify(&read(&log)?, &read(&golden)?) {
                Verdict::Pass { records } => println!("pass: {records} records match"),
                Verdict::Fail { line, expected, actual } => {
                    println!("fail at record {line}");
                    println!("  expected: {}", expected.as_deref().unwrap_or("<end of log>"));
                    println!("  actual:   {}", actual.as_deref().unwrap_or("<end of log>"));
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Cmd::EncodeFrame { command, payload, waveform, half_bit_ms } => {
            let code = u8::from_str_radix(command.trim_start_matches("0x"), 16).context("command must be one hex byte")?;
            let word = match payload {
                Some(bits) => parse_word(&bits)?,
                None => ProgramWord::from_u64(0)?,
            };
            let frame = OpticalFrame::new(Command::from_code(code), word);
            println!("{}", frame.to_hex());
            if let Some(path) = waveform {
                let wave = manchester_encode(&frame, half_bit_ms, Convention::default())?;
                fs::write(&path, wave.to_text()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Cmd::Serve { bind, snapshot_rate } => {
            let config = ServerConfig { snapshot_rate, ..ServerConfig::default() };
            let server = Server::bind(&bind, config).with_context(|| format!("binding {bind}"))?;
            eprintln!("serving on {}", server.local_addr()?);
            server.serve()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMARTLET_LOG_LEVEL", "warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
