fn main() {
    std::process::exit(specaug::cli::run(std::env::args_os()));
}
