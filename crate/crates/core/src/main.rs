fn main() {
    std::process::exit(domainrc::cli::run(std::env::args_os()));
}
