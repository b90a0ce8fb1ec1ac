fn main() {
    std::process::exit(dbfgs::cli::main_with_args(std::env::args_os()));
}
