fn main() {
    std::process::exit(fets_core::cli::run_from(std::env::args_os()));
}
