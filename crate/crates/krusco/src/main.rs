use clap::Parser;

fn main() {
    let cli = krusco::cli::Cli::parse();
    if let Err(e) = krusco::commands::run(cli) {
        eprintln!("krusco: {e}");
        std::process::exit(e.exit_code());
    }
}
