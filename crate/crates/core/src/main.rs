use clap::Parser;

fn main() {
    let cli = mlbvae::cli::Cli::parse();
    if let Err(e) = mlbvae::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
