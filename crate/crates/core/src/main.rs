fn main() {
    std::process::exit(ogp_bounds::cli::main_with_args(std::env::args_os()));
}
