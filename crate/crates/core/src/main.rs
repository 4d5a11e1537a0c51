fn main() {
    std::process::exit(panelbreak::cli::main_with_args(std::env::args_os()));
}
