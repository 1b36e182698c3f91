fn main() {
    std::process::exit(ergodic_lab::cli::run(std::env::args().skip(1)));
}
