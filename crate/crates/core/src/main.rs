fn main() {
    std::process::exit(vidlang::cli::run(std::env::args_os()));
}
