fn main() {
    std::process::exit(svtn_cli::main_with_args(std::env::args_os()));
}
