fn main() {
    std::process::exit(depthpose_cli::run(std::env::args_os()));
}
