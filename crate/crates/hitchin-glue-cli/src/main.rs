mod args;
mod cache;
mod error;
mod pipeline;

use clap::Parser;

fn main() {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        // clap prints usage itself and exits 2 on bad flags, 0 on help.
        Err(err) => err.exit(),
    };
    if let Err(err) = pipeline::run(cli) {
        eprintln!(
            "{}",
            serde_json::json!({ "kind": err.kind(), "error": err.to_string() })
        );
        std::process::exit(err.exit_code());
    }
}
