fn main() {
    std::process::exit(mildsolve::cli::run(std::env::args_os()));
}
