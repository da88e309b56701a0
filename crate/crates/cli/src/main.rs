fn main() {
    std::process::exit(afb_cli::main_with(std::env::args_os()));
}
