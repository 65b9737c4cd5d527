fn main() {
    std::process::exit(benchkit::cli::run(std::env::args()));
}
