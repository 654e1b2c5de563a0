fn main() {
    std::process::exit(trackcentre::cli::main());
}
