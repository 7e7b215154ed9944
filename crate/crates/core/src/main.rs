fn main() {
    std::process::exit(soupkit::cli::main_with_args(std::env::args_os()));
}
