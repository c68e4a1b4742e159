fn main() {
    std::process::exit(copsge::cli::main_with_args(std::env::args_os()));
}
