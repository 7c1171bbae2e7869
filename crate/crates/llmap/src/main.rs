use clap::Parser;
use llmap::cli::Cli;

fn main() {
    let cli = Cli::parse();
    match llmap::run(cli.command) {
        Ok(report) => print!("{report}"),
        Err(e) => {
            eprintln!("llmap: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
