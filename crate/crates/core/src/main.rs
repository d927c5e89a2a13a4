fn main() {
    std::process::exit(uncertainty_lab::cli::run());
}
