fn main() {
    std::process::exit(rescast::cli::run());
}
