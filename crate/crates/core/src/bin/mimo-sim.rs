fn main() {
    std::process::exit(mimo_sim::cli::main());
}
