fn main() {
    std::process::exit(fdsm::cli::run(std::env::args_os()));
}
