fn main() {
    std::process::exit(adascan_cli::run_from(std::env::args_os()));
}
