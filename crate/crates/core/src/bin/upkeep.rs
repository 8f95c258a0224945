fn main() {
    std::process::exit(upkeep::cli::main_with_args(std::env::args_os()));
}
