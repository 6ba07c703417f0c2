fn main() {
    std::process::exit(tapfm::cli::run(std::env::args_os()));
}
