fn main() {
    std::process::exit(stnngp::cli::main_with_args(std::env::args_os()));
}
