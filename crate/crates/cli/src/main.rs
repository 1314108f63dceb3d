fn main() {
    std::process::exit(coopsense_cli::run_main(std::env::args_os()));
}
