// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use tzperf::boundary::{rpc, RelayMode};
use tzperf::cli::{parse_args, RelayChoice};

/// `tzperf supplicant --segment <path> --segment-size <n>`, spawned by the
/// relay of a boundary run.
fn supplicant(args: &[String]) -> ExitCode {
    let mut path = None;
    let mut size = None;
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--segment" => path = it.next().map(PathBuf::from),
            "--segment-size" => size = it.next().and_then(|s| s.parse::<usize>().ok()),
            _ => {}
        }
    }
    let (Some(path), Some(size)) = (path, size) else {
        eprintln!("usage: tzperf supplicant --segment <path> --segment-size <bytes>");
        return ExitCode::from(2);
    };
    match rpc::serve_stdio(&path, size) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("supplicant: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    if argv.get(1).map(String::as_str) == Some("supplicant") {
        return supplicant(&argv[2..]);
    }
    let inv = match parse_args(&argv) {
        Ok(inv) => inv,
        Err(e) => {
            if e.exit_code == 0 {
                print!("{e}");
            } else {
                eprint!("{e}");
            }
            return ExitCode::from(e.exit_code as u8);
        }
    };
    let relay = match inv.relay {
        RelayChoice::Thread => RelayMode::Thread,
        RelayChoice::Process => match std::env::current_exe() {
            Ok(program) => RelayMode::Process { program },
            Err(_) => RelayMode::Thread,
        },
    };
    ExitCode::from(tzperf::runner::execute(&inv, relay) as u8)
}
