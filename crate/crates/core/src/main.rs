fn main() {
    std::process::exit(ztflow::cli::run(std::env::args()));
}
