fn main() {
    std::process::exit(star_regression::cli::main_with_args(std::env::args_os()));
}
