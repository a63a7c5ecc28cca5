fn main() {
    std::process::exit(rankmoments::cli::main_with_args(std::env::args_os()));
}
