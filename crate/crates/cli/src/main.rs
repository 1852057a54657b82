fn main() {
    std::process::exit(btex_cli::main_with_args(std::env::args_os()));
}
