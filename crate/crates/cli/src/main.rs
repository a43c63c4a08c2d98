use clap::Parser;

fn main() {
    let cli = descrix::Cli::parse();
    std::process::exit(descrix::run(cli));
}
