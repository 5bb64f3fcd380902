fn main() {
    std::process::exit(benchvar::cli::main());
}
