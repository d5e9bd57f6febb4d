fn main() {
    std::process::exit(dana::cli::main_with_args(std::env::args_os()));
}
