use clap::Parser;

fn main() {
    let cli = blb::cli::Cli::parse();
    if let Err(e) = blb::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
