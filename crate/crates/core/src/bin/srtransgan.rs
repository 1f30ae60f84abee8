fn main() {
    std::process::exit(srtransgan::cli::main_with_args(std::env::args_os()));
}
