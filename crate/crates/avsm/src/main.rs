fn main() {
    std::process::exit(avsm::cli::run(std::env::args_os()));
}
