fn main() {
    std::process::exit(bias_eval::cli::main_from_args(std::env::args_os()));
}
