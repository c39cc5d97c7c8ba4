fn main() {
    std::process::exit(semshield::harness::cli::run_cli(std::env::args_os()));
}
