//! Run a subcommand programmatically, then replay its manifest.

use clap::Parser;
use favsites::cli::{replay, run_command, Cli, Resolver};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().display().to_string();
    let cli = Cli::parse_from(["favsites", "simulate", "--steps", "5000", "--reps", "4", "--seed", "7", "--out", &out]);
    let run = run_command(&cli.command, &cli.global, Resolver::default(), None).expect("runs");
    for o in &run.manifest.outputs {
        println!("{} {} bytes sha256 {}", o.path, o.bytes, &o.sha256[..16]);
    }
    let r = replay(&run.manifest_path, Some(2)).expect("readable manifest");
    println!("replay exit {} {:?}", r.exit_code, r.problems);
}
