fn main() {
    std::process::exit(relight_cli::main_with_args(std::env::args_os()));
}
