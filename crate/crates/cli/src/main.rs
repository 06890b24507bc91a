fn main() {
    std::process::exit(coarsen_cli::main_with(std::env::args_os()));
}
