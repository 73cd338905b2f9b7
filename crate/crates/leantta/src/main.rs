fn main() {
    std::process::exit(leantta::cli::run(std::env::args_os()));
}
