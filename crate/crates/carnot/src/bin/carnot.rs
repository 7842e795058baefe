use clap::Parser;

use carnot::cli::{run, Cli};

fn main() {
    std::process::exit(run(&Cli::parse()) as i32);
}
