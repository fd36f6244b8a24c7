fn main() {
    std::process::exit(cav_platoon::cli::main());
}
