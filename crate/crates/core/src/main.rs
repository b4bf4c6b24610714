fn main() {
    std::process::exit(abmse::workflow::cli::main());
}
