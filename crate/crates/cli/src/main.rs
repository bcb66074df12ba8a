use clap::Parser;

fn main() {
    let cli = godnf_cli::Cli::parse();
    std::process::exit(godnf_cli::run(&cli));
}
