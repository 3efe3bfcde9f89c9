fn main() {
    std::process::exit(intentflow::cli::run(std::env::args_os()));
}
