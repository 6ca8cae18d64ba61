fn main() {
    std::process::exit(tabprompt::cli::run(std::env::args_os()));
}
