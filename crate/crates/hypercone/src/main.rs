fn main() {
    std::process::exit(hypercone::cli::run());
}
