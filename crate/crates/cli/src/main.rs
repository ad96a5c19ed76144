fn main() {
    std::process::exit(effifit_cli::run(std::env::args_os().collect()));
}
