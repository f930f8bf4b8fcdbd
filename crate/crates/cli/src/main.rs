use clap::Parser;

fn main() {
    let cli = burstlab_cli::Cli::parse();
    if let Err(e) = burstlab_cli::run(cli) {
        eprintln!("burstlab: {e}");
        std::process::exit(e.exit_code());
    }
}
