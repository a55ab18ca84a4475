fn main() {
    std::process::exit(veritas::cli::run(std::env::args_os()));
}
