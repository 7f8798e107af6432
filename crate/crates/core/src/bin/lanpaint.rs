fn main() {
    std::process::exit(lanpaint::cli::main_with_args(std::env::args_os()));
}
