fn main() {
    std::process::exit(rmab::cli::main());
}
