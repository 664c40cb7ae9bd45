fn main() {
    std::process::exit(cospace::cli::run(std::env::args_os()));
}
