fn main() {
    std::process::exit(skewlab::cli::run(std::env::args_os()));
}
