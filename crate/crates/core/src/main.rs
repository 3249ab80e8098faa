fn main() {
    std::process::exit(psmm::cli::run(std::env::args_os()));
}
