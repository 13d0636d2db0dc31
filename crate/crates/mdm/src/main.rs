fn main() {
    std::process::exit(mdm::cli::run(std::env::args_os()));
}
