fn main() {
    std::process::exit(ddm::cli::run_cli(std::env::args_os()));
}
