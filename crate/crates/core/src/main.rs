fn main() {
    std::process::exit(tcbm::cli::main_with(std::env::args_os()));
}
