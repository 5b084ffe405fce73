fn main() {
    std::process::exit(geogan::cli::main_with_args(std::env::args_os()));
}
