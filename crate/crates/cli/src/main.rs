fn main() {
    std::process::exit(asip_cli::main_with(std::env::args_os()));
}
