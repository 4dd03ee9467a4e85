fn main() {
    std::process::exit(divkit::cli::main_with_args(std::env::args_os()));
}
