fn main() {
    std::process::exit(panel_mmle::cli::main());
}
