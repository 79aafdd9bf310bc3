fn main() {
    std::process::exit(meshmsg::cli::main());
}
