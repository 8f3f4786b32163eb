fn main() {
    std::process::exit(trailmark::cli::run(std::env::args_os()));
}
