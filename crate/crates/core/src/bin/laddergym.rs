fn main() {
    eprintln!("command line interface is not wired up yet");
    std::process::exit(2);
}
