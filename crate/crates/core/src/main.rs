fn main() {
    std::process::exit(mmirt::cli::run());
}
