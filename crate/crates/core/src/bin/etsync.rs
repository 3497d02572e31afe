fn main() {
    std::process::exit(etsync::cli::main_with_args(std::env::args_os()));
}
