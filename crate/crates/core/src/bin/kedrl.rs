fn main() {
    std::process::exit(kedrl::cli::run());
}
