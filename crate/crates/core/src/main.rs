fn main() {
    std::process::exit(stgeyer::cli::main_with_args(std::env::args_os()));
}
