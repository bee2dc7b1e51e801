fn main() {
    std::process::exit(kalman_inversion::cli::main_with_args(std::env::args_os()));
}
