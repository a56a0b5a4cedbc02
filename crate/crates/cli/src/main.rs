use clap::Parser;

fn main() {
    let cli = spotlmm_cli::Cli::parse();
    std::process::exit(spotlmm_cli::run(cli));
}
