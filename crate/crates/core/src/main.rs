fn main() {
    std::process::exit(glagrad::cli::run(std::env::args_os()));
}
