use clap::Parser;

fn main() {
    std::process::exit(sdwlan_cli::execute(sdwlan_cli::Cli::parse()));
}
