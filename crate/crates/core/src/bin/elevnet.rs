fn main() {
    std::process::exit(elevnet::harness::cli::run(std::env::args_os()));
}
