use std::io::Write;

use clap::Parser;

use triview_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(value) => {
            let text = serde_json::to_string_pretty(&value).expect("output serializes");
            // a closed pipe on the reader's side is not an error
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
