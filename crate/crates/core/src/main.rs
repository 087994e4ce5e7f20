fn main() {
    std::process::exit(rtopt::cli::run(std::env::args_os()));
}
