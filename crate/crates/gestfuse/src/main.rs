fn main() {
    std::process::exit(gestfuse::cli::run(std::env::args_os()));
}
