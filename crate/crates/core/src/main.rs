fn main() {
    std::process::exit(debias_core::cli::main_with(std::env::args_os()));
}
