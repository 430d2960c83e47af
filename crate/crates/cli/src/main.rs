use clap::Parser;

fn main() {
    let cli = intsplit_cli::Cli::parse();
    std::process::exit(intsplit_cli::run(cli));
}
