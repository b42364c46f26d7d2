fn main() {
    eprintln!("remedy: not yet wired up");
    std::process::exit(2);
}
