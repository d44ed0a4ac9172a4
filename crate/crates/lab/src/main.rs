fn main() {
    std::process::exit(steinbn_lab::run_cli(std::env::args()));
}
