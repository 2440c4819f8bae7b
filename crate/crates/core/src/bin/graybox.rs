use clap::Parser;

fn main() {
    let cli = graybox::cli::Cli::parse();
    std::process::exit(graybox::cli::run(cli));
}
