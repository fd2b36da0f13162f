fn main() {
    std::process::exit(volforge::cli::run(std::env::args_os()));
}
