use clap::Parser;

fn main() {
    std::process::exit(staticvac_cli::run(staticvac_cli::Cli::parse()));
}
