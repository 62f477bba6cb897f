fn main() {
    std::process::exit(vmc::cli::run_from(std::env::args_os()));
}
