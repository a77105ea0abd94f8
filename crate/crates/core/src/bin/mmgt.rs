fn main() {
    std::process::exit(mmgt::cli::run(std::env::args_os()));
}
