fn main() {
    std::process::exit(ergolab_harness::cli::main());
}
