use clap::Parser;

fn main() {
    let cli = ganblend_cli::Cli::parse();
    if let Err(e) = ganblend_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
