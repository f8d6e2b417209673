fn main() {
    std::process::exit(hypoparam::cli::run(std::env::args_os()));
}
