fn main() {
    std::process::exit(depth2face::cli::run(std::env::args_os()));
}
