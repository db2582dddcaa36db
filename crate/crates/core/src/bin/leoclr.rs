fn main() {
    std::process::exit(leoclr::cli::main_with_args(std::env::args_os()));
}
