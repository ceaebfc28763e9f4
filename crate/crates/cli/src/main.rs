use clap::Parser;

fn main() {
    let cli = pulsesurge_cli::Cli::parse();
    if let Err(e) = pulsesurge_cli::run(cli) {
        eprintln!("pulsesurge: {e}");
        std::process::exit(e.exit_code());
    }
}
