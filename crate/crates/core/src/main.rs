use clap::Parser;

fn main() {
    let cli = dtebounds::cli::Cli::parse();
    std::process::exit(dtebounds::cli::run(cli));
}
