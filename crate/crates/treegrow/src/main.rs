fn main() {
    std::process::exit(treegrow::cli_main());
}
