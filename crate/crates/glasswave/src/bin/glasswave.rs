fn main() {
    std::process::exit(glasswave::cli::run(std::env::args_os()));
}
