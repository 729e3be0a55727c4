fn main() {
    std::process::exit(auxinv::cli::run_from(std::env::args_os()));
}
