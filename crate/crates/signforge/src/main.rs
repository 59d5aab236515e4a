use clap::Parser;

use signforge::campaign::{run, CliArgs};

fn main() {
    std::process::exit(run(CliArgs::parse()));
}
