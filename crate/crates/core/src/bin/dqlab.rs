fn main() {
    std::process::exit(dqlab::cli::run(std::env::args_os()));
}
