fn main() {
    std::process::exit(favsites::cli::main_with_args(std::env::args_os()));
}
