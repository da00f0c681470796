fn main() {
    std::process::exit(xlstmtime::cli::run(std::env::args_os()));
}
