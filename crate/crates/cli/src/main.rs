fn main() {
    std::process::exit(avrobust_cli::main_with(std::env::args().collect()));
}
