fn main() {
    std::process::exit(kpo_cli::run(std::env::args().collect()));
}
