fn main() {
    std::process::exit(spechp::cli::run(std::env::args_os()));
}
