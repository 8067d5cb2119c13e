fn main() {
    std::process::exit(gsr::cli::run_from(std::env::args_os()));
}
