fn main() {
    std::process::exit(mono3d_cli::main_with_args(std::env::args_os()));
}
