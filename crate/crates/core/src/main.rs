fn main() {
    std::process::exit(zsvid::harness::cli::run_cli(std::env::args_os()));
}
