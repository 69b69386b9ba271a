fn main() {
    std::process::exit(kronc::cli::main());
}
