fn main() {
    std::process::exit(synthreg::cli::run(std::env::args()));
}
