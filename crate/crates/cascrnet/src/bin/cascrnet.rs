fn main() {
    // Placeholder until the CLI module lands.
    eprintln!("cascrnet: not yet wired up");
    std::process::exit(1);
}
