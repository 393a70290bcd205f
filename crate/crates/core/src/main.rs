fn main() {
    std::process::exit(hsvae::cli::main_with(std::env::args_os()));
}
