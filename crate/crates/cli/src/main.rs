fn main() {
    std::process::exit(dnlspde_cli::run_cli(std::env::args_os()));
}
