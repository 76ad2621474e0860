fn main() {
    std::process::exit(gatebench::cli::run());
}
