fn main() {
    std::process::exit(dmgt::cli::main_with_args(std::env::args_os()));
}
