fn main() {
    std::process::exit(failprobe::cli::main_with(std::env::args_os()));
}
