use clap::Parser;

fn main() {
    let cli = corallite_cli::args::Cli::parse();
    if let Err(err) = corallite_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
