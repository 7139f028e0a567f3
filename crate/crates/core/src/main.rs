fn main() {
    std::process::exit(coordtrack::run_cli());
}
