use clap::Parser;

fn main() {
    let cli = pmanet::cli::Cli::parse();
    std::process::exit(pmanet::cli::run(cli));
}
