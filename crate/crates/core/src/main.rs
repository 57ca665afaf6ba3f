fn main() {
    std::process::exit(smoothfit::cli::run(std::env::args_os()));
}
