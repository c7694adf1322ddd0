fn main() {
    std::process::exit(mimcap::cli::run(std::env::args_os()));
}
