fn main() {
    std::process::exit(grafs::cli::main_with_args(std::env::args_os()));
}
