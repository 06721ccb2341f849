use clap::Parser;

fn main() {
    let cli = spherebot::cli::Cli::parse();
    std::process::exit(spherebot::cli::run(cli));
}
