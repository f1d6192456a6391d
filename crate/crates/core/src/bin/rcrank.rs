fn main() {
    std::process::exit(rcrank::cli::main());
}
