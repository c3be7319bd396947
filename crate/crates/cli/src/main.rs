fn main() {
    std::process::exit(specsplat_cli::run(std::env::args_os()));
}
