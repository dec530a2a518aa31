fn main() {
    std::process::exit(irga::cli::main_entry());
}
