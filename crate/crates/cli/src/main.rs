fn main() {
    std::process::exit(blpp_cli::run(std::env::args_os()));
}
