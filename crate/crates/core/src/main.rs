fn main() {
    std::process::exit(ipergo::cli::main_with_args(std::env::args_os()));
}
