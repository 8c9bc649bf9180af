// NaN must fail validation, hence `!(x > 0)` style checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod output;
mod parse;

use std::ffi::OsString;
use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

use args::Cli;
use commands::{Failure, Outcome};
use output::{sibling, write_output, RunManifest};

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

fn run(argv: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(t) = cli.common.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return 1;
        }
    }
    let start = Instant::now();
    let (outcome, code, status) = match commands::execute(&cli) {
        Ok(o) => (Some(o), 0, "ok"),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            return 2;
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            return 1;
        }
        Err(Failure::Budget { message, partial }) => {
            eprintln!("budget exceeded: {message}; writing partial results");
            (partial.map(|b| *b), 3, "budget_exceeded")
        }
    };
    match emit(&cli, outcome, start, status) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: writing output: {e}");
            1
        }
    }
}

fn emit(cli: &Cli, outcome: Option<Outcome>, start: Instant, status: &str) -> std::io::Result<()> {
    let csv = outcome.as_ref().map(|o| o.table.render());
    let summary = outcome
        .as_ref()
        .and_then(|o| o.summary.as_ref())
        .map(|s| serde_json::to_string_pretty(s).expect("json") + "\n");
    let Some(out) = &cli.common.out else {
        let mut stdout = std::io::stdout().lock();
        if let Some(csv) = &csv {
            stdout.write_all(csv.as_bytes())?;
        }
        if let Some(s) = &summary {
            eprint!("{s}");
        }
        return Ok(());
    };
    let mut outputs = Vec::new();
    if let Some(csv) = &csv {
        outputs.push(write_output(out, csv.as_bytes())?);
    }
    if let Some(s) = &summary {
        outputs.push(write_output(&sibling(out, ".summary.json"), s.as_bytes())?);
    }
    let laws: serde_json::Map<String, serde_json::Value> = outcome
        .iter()
        .flat_map(|o| &o.laws)
        .map(|(role, cfg)| (role.to_string(), serde_json::to_value(cfg).expect("json")))
        .collect();
    let manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        config: json!({ "args": cli, "laws": laws }),
        seed: cli.common.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        status: status.to_string(),
        partial: status != "ok",
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("json") + "\n";
    std::fs::write(sibling(out, ".manifest.json"), text)
}
