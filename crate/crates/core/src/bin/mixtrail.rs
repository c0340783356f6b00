fn main() {
    std::process::exit(mixtrail::cli::run(std::env::args_os()));
}
