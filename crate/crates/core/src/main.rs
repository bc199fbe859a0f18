fn main() {
    std::process::exit(respnet::cli::run(std::env::args_os()));
}
