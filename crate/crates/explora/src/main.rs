fn main() {
    std::process::exit(explora::cli::run());
}
